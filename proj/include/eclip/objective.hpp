// Copyright 2026-present the eclip project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "eclip/autograd.hpp"
#include "eclip/model.hpp"

namespace eclip {

// log(1/tau) is clamped to this range after every optimizer step, which keeps
// tau in [0.01, 1].
inline constexpr double kMinLogInvTau = 0.0;
inline constexpr double kMaxLogInvTau = 4.605170185988091;  // log(100)
inline constexpr double kInitialTau = 0.07;

void clamp_log_inv_tau(Tensor& log_inv_tau);

struct MixupConfig {
  double alpha = 0.3;
  void validate() const;
};

struct CurriculumConfig {
  std::size_t total_steps = 2000;
  double cold_frac = 0.10;
  double warm_frac = 0.30;
  double cool_frac = 0.40;
  double p_start = 0.05;
  double p_max = 0.5;
  double p_min = 0.1;

  void validate() const;
  std::size_t cold_end() const;
  std::size_t warm_end() const;
  std::size_t cool_end() const;
};

struct LossBreakdown {
  double l_text = 0.0;
  double l_image = 0.0;
  double l_clip = 0.0;
  double l_priming = 0.0;
  double l_total = 0.0;
  std::size_t n_p = 0;
  double w_p = 0.1;
  double tau = kInitialTau;
};

struct ClipLoss {
  Var l_text;
  Var l_image;
  Var l_clip;  // (l_text + l_image) / 2
};

// Symmetric InfoNCE over row-paired unit embeddings V[N,d], T[N,d] with
// logits exp(log_inv_tau) * V T^T. ShapeError on a row mismatch.
ClipLoss clip_infonce(const Var& v, const Var& t, const Var& log_inv_tau);

// Double-loop reference for l_clip.
double infonce_oracle(const Tensor& v, const Tensor& t, double tau);

// Beta(alpha, alpha) via two gamma draws. ConfigError if alpha <= 0.
double sample_lambda(const MixupConfig& cfg, std::mt19937_64& rng);

// Row r: lambdas[r] * images + (1 - lambdas[r]) * expert. Endpoints exact.
Var mixup_images(const Var& images, const Var& expert, std::span<const double> lambdas);

// Mean squared error between images and heatmap_process(images, ones).
Var priming_loss(const Var& images, const Model& model);

struct PairedEmbeddings {
  Var v;
  Var t;
};

// Appends (v_mix[m], t[text_index[m]]) after the base pairs.
// ContractError on an out-of-range text index.
PairedEmbeddings assemble_pairs(const Var& v, const Var& t, const Var& v_mix,
                                std::span<const std::size_t> text_index);

// (1 - w_p) * l_clip + w_p * l_priming when priming is active and n_p > 0,
// otherwise l_clip.
Var total_loss(const Var& l_clip, const Var& l_priming, std::size_t n_p, double w_p, bool priming_active);

// Piecewise-linear expert inclusion probability. ContractError unless
// step < total_steps.
double curriculum_prob(std::size_t step, const CurriculumConfig& cfg);

inline bool decide_expert(double p_curr, double u, bool has_heatmap) { return has_heatmap && u < p_curr; }

}  // namespace eclip
