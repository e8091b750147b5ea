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
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "eclip/model.hpp"
#include "eclip/objective.hpp"
#include "eclip/synthdata.hpp"
#include "json.hpp"

namespace eclip {

// eclip: curriculum + mixup + priming. clip: the expert branch never runs.
// naive: expert pairs appended every step with lambda = 0, no priming.
enum class ExpertMode { kEclip, kClip, kNaive };

std::string_view to_string(ExpertMode mode);
ExpertMode parse_expert_mode(std::string_view name);

struct TrainConfig {
  ModelConfig model;
  std::size_t batch_size = 64;
  std::size_t expert_batch_size = 16;
  std::size_t total_steps = 2000;
  // Unset: 2e-3 for eclip/naive, 1e-3 for clip.
  std::optional<double> base_lr;
  double weight_decay = 1e-3;
  double warmup_frac = 0.10;
  std::uint64_t seed = 0;
  // Unset: the curriculum's cold-start length.
  std::optional<std::size_t> priming_steps;
  CurriculumConfig curriculum;  // total_steps is kept equal to the field above
  MixupConfig mixup;
  double w_p = 0.1;
  ExpertMode expert_mode = ExpertMode::kEclip;
  bool use_curriculum = true;
  bool use_mixup = true;
  bool use_priming = true;
  // Expert inclusion probability when the curriculum is disabled.
  double fixed_p = 0.5;

  void validate() const;
  double lr() const;
  std::size_t priming_end() const;
  CurriculumConfig schedule() const;
  // FNV-1a over the canonical JSON, as 16 hex digits.
  std::string hash() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Keys absent from j keep their current values in c.
void from_json(const nlohmann::json& j, TrainConfig& c);

// Linear warmup over floor(warmup_frac * T) steps, then cosine decay to 0 at T.
double lr_schedule(std::size_t step, const TrainConfig& cfg);

// Adam with decoupled weight decay applied before the moment update.
// Parameters that received no gradient are left untouched.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(const std::vector<NamedParam>& params);

  // NumericError naming the parameter on a non-finite gradient; nothing is
  // updated in that case.
  void step(std::vector<NamedParam>& params, double lr, double weight_decay);

  std::uint64_t steps() const { return t_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t t_ = 0;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double p_curr = 0.0;
  bool expert_used = false;
  LossBreakdown loss;
};

// Inputs of one training step, already batched.
struct StepInputs {
  Var images;              // [N,C,H,W]
  IndexMatrix tokens;      // [N,L]
  bool expert_used = false;
  Var expert_images;       // [M,C,H,W]
  Var expert_heatmaps;     // [M,1,H,W]
  IndexMatrix expert_tokens;
  std::vector<double> lambdas;  // one per expert row
  bool priming_active = false;
};

struct StepGraph {
  ClipLoss clip;
  Var priming;  // empty when inactive
  std::size_t n_p = 0;
  Var total;
};

// Builds the step loss: base pairs, expert pairs and mixed pairs appended
// when expert_used, priming on the main images when active.
StepGraph step_loss(const Model& model, const StepInputs& in, double w_p);

using StepCallback = std::function<void(const StepRecord&)>;

class Trainer {
 public:
  // ConfigError when the dataset cannot serve the configured batches.
  Trainer(const TrainConfig& cfg, const Dataset& data);

  // Continues from a checkpoint directory written by save_checkpoint.
  // IntegrityError on corrupt or mismatching files; nothing is loaded then.
  static Trainer resume(const std::filesystem::path& dir, const Dataset& data);

  // Runs one step. NumericError aborts on a non-finite loss or gradient.
  StepRecord step();
  // Steps until next_step() == until (or total_steps).
  void run(std::size_t until, const StepCallback& callback = {});

  std::size_t next_step() const { return step_; }
  bool done() const { return step_ >= cfg_.total_steps; }
  const TrainConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const std::vector<StepRecord>& log() const { return log_; }

  void save_checkpoint(const std::filesystem::path& dir) const;

 private:
  Trainer(const TrainConfig& cfg, const Dataset& data, Model model);

  TrainConfig cfg_;
  const Dataset* data_;
  Model model_;
  Adam adam_;
  BatchStream main_stream_;
  std::optional<BatchStream> expert_stream_;
  std::mt19937_64 curriculum_rng_;
  std::mt19937_64 mixup_rng_;
  std::size_t step_ = 0;
  std::vector<StepRecord> log_;
};

// TrainLog CSV with header
// step,lr,p_curr,expert_used,l_text,l_image,l_clip,l_priming,l_total,tau
void write_train_log(const std::filesystem::path& path, const std::vector<StepRecord>& log);
std::vector<StepRecord> read_train_log(const std::filesystem::path& path);

}  // namespace eclip
