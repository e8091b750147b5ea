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

#include "eclip/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eclip/errors.hpp"

namespace eclip {

void clamp_log_inv_tau(Tensor& log_inv_tau) {
  for (double& v : log_inv_tau.data()) v = std::clamp(v, kMinLogInvTau, kMaxLogInvTau);
}

void MixupConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("mixup.alpha must be positive");
}

void CurriculumConfig::validate() const {
  if (total_steps < 1) throw ConfigError("curriculum.total_steps must be at least 1");
  for (double f : {cold_frac, warm_frac, cool_frac})
    if (!(f >= 0.0)) throw ConfigError("curriculum phase fractions must be non-negative");
  if (cold_frac + warm_frac + cool_frac > 1.0 + 1e-12)
    throw ConfigError("curriculum: cold_frac + warm_frac + cool_frac must not exceed 1");
  if (!(p_start >= 0.0 && p_start <= p_max && p_max <= 1.0))
    throw ConfigError("curriculum: need 0 <= p_start <= p_max <= 1");
  if (!(p_min >= 0.0 && p_min <= p_max)) throw ConfigError("curriculum: need 0 <= p_min <= p_max");
}

namespace {

// floor(frac * total), robust to representation error in frac.
std::size_t phase_floor(double frac, std::size_t total) {
  return static_cast<std::size_t>(std::floor(frac * static_cast<double>(total) + 1e-9));
}

double ramp(double from, double to, std::size_t step, std::size_t begin, std::size_t end) {
  const double t = static_cast<double>(step - begin) / static_cast<double>(end - begin);
  return (1.0 - t) * from + t * to;
}

}  // namespace

std::size_t CurriculumConfig::cold_end() const { return phase_floor(cold_frac, total_steps); }
std::size_t CurriculumConfig::warm_end() const { return phase_floor(cold_frac + warm_frac, total_steps); }
std::size_t CurriculumConfig::cool_end() const {
  return phase_floor(cold_frac + warm_frac + cool_frac, total_steps);
}

double curriculum_prob(std::size_t step, const CurriculumConfig& cfg) {
  if (step >= cfg.total_steps)
    throw ContractError("curriculum_prob: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(cfg.total_steps) + ")");
  const std::size_t c = cfg.cold_end(), w = cfg.warm_end(), k = cfg.cool_end();
  if (step < c) return 0.0;
  if (step < w) return ramp(cfg.p_start, cfg.p_max, step, c, w);
  if (step < k) return ramp(cfg.p_max, cfg.p_min, step, w, k);
  return cfg.p_min;
}

ClipLoss clip_infonce(const Var& v, const Var& t, const Var& log_inv_tau) {
  if (v.dims().size() != 2 || v.dims() != t.dims())
    throw ShapeError("clip_infonce: V " + shape_str(v.dims()) + " and T " + shape_str(t.dims()) + " must match");
  const std::size_t n = v.dim(0);
  if (n == 0) throw ContractError("clip_infonce: empty batch");
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i;
  Var logits = scale_by(matmul(v, t, false, true), exp(log_inv_tau));
  Var l_image = cross_entropy(logits, diag);
  Var l_text = cross_entropy(transpose(logits), diag);
  return {l_text, l_image, scale(add(l_text, l_image), 0.5)};
}

double infonce_oracle(const Tensor& v, const Tensor& t, double tau) {
  const std::size_t n = v.dim(0), d = v.dim(1);
  auto sim = [&](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += a[i * d + k] * b[j * d + k];
    return s / tau;
  };
  // -log(exp(s_ii) / sum_j exp(s_ij)) with the max factored out.
  auto term = [&](const Tensor& anchor, const Tensor& others, std::size_t i) {
    double m = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) m = std::max(m, sim(anchor, i, others, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(sim(anchor, i, others, j) - m);
    return -(sim(anchor, i, others, i) - m - std::log(z));
  };
  double l_text = 0.0, l_image = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    l_text += term(t, v, i);
    l_image += term(v, t, i);
  }
  return 0.5 * (l_text / static_cast<double>(n) + l_image / static_cast<double>(n));
}

double sample_lambda(const MixupConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  for (;;) {
    std::gamma_distribution<double> gx(cfg.alpha, 1.0);
    const double x = gx(rng);
    std::gamma_distribution<double> gy(cfg.alpha, 1.0);
    const double y = gy(rng);
    if (x + y > 0.0) return x / (x + y);
  }
}

Var mixup_images(const Var& images, const Var& expert, std::span<const double> lambdas) {
  for (double l : lambdas)
    if (!(l >= 0.0 && l <= 1.0)) throw ContractError("mixup_images: lambda outside [0,1]");
  return mixup(images, expert, lambdas);
}

Var priming_loss(const Var& images, const Model& model) {
  Shape hd = images.dims();
  if (hd.size() != 4) throw ShapeError("priming_loss: expected [B,C,H,W], got " + shape_str(hd));
  hd[1] = 1;
  return mse(model.heatmap_process(images, Var::constant(Tensor::full(hd, 1.0))), images);
}

PairedEmbeddings assemble_pairs(const Var& v, const Var& t, const Var& v_mix,
                                std::span<const std::size_t> text_index) {
  if (!v_mix || text_index.empty()) return {v, t};
  if (v_mix.dim(0) != text_index.size())
    throw ContractError("assemble_pairs: " + std::to_string(v_mix.dim(0)) + " mixed rows but " +
                        std::to_string(text_index.size()) + " text indices");
  for (std::size_t i : text_index)
    if (i >= t.dim(0)) throw ContractError("assemble_pairs: text index " + std::to_string(i) + " out of range");
  std::vector<Var> vs{v, v_mix};
  std::vector<Var> ts{t, gather_rows(t, text_index)};
  return {concat_rows(vs), concat_rows(ts)};
}

Var total_loss(const Var& l_clip, const Var& l_priming, std::size_t n_p, double w_p, bool priming_active) {
  if (!priming_active || n_p == 0 || !l_priming) return l_clip;
  return add(scale(l_clip, 1.0 - w_p), scale(l_priming, w_p));
}

}  // namespace eclip
