/* Copyright 2026 The Datapipe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "datapipe/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace datapipe::autotune {

namespace {

struct Knob {
  SnapshotNode* node;
  bool is_parallelism;  // otherwise buffer
  double min, max;
};

void CollectKnobs(SnapshotNode& node, std::vector<Knob>& out) {
  // Parallel transforms alias their buffer to the parallelism knob, so each
  // node contributes at most one tunable.
  if (node.parallelism_tunable) {
    out.push_back({&node, true, node.parallelism_min, node.parallelism_max});
  } else if (node.buffer_tunable) {
    out.push_back({&node, false, node.buffer_min, node.buffer_max});
  }
  for (auto& child : node.children) CollectKnobs(child, out);
}

double KnobValue(const Knob& k) {
  return k.is_parallelism ? k.node->parallelism : k.node->buffer;
}

void SetKnob(Knob& k, double v) {
  v = std::clamp(v, k.min, k.max);
  if (k.is_parallelism) {
    k.node->parallelism = v;
    // Parallel transforms buffer up to their parallelism.
    if (k.node->buffer_tunable) k.node->buffer = v;
  } else {
    k.node->buffer = v;
  }
}

// CPU usage: sum of parallelism knobs (fixed and tunable). RAM usage: sum of
// buffer sizes weighted by observed element sizes.
void SumUsage(const SnapshotNode& node, double& cpu, double& ram) {
  if (node.cls == NodeClass::kAsyncQueue ||
      node.cls == NodeClass::kAsyncInterleave) {
    cpu += std::max(1.0, node.parallelism);
    double buffered = std::max(node.buffer, 1.0);
    if (node.batch_size > 1 && node.buffer <= 1.0) {
      buffered = std::max(1.0, node.parallelism /
                                   static_cast<double>(node.batch_size)) +
                 1.0;
    }
    ram += buffered * node.bytes_per_element;
  }
  for (const auto& child : node.children) SumUsage(child, cpu, ram);
}

double LatencyMs(const SnapshotNode& root, double rate) {
  return EstimateOutputLatency(root, rate).root_latency_ns / 1e6;
}

}  // namespace

Budget Budget::Defaults() {
  Budget b;
  b.cpu_parallelism =
      std::max(1u, std::thread::hardware_concurrency());
  b.ram_bytes = 1024.0 * 1024.0 * 1024.0;  // fallback: 1 GiB
  std::ifstream meminfo("/proc/meminfo");
  std::string key;
  long kb = 0;
  while (meminfo >> key >> kb) {
    if (key == "MemTotal:") {
      b.ram_bytes = kb * 1024.0 / 4.0;  // a quarter of physical RAM
      break;
    }
    meminfo.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
  }
  return b;
}

TuningResult OptimizeParameters(SnapshotNode& snapshot,
                                double root_consumer_rate_per_sec,
                                const Budget& budget,
                                const TunerConfig& config) {
  TuningResult result;
  std::vector<Knob> knobs;
  CollectKnobs(snapshot, knobs);

  double rate = root_consumer_rate_per_sec > 0 ? root_consumer_rate_per_sec
                                               : 100.0;
  result.initial_latency_ms = LatencyMs(snapshot, rate);
  result.final_latency_ms = result.initial_latency_ms;
  if (knobs.empty()) {
    SumUsage(snapshot, result.cpu_used, result.ram_used_bytes);
    return result;
  }

  auto usage_ok = [&] {
    double cpu = 0, ram = 0;
    SumUsage(snapshot, cpu, ram);
    return cpu <= budget.cpu_parallelism && ram <= budget.ram_bytes;
  };

  // Start the descent from the minimum assignment.
  for (auto& k : knobs) SetKnob(k, k.min);
  if (!usage_ok()) {
    // Even the minimum assignment exceeds the budget: publish minima.
    result.budget_infeasible = true;
  } else {
    double latency = LatencyMs(snapshot, rate);
    double eps = std::max(config.eps_fraction * latency, 1e-6);
    double best = std::numeric_limits<double>::infinity();
    double delta = config.initial_delta;
    std::vector<double> saved(knobs.size());

    while (result.steps < config.max_steps && best - latency >= eps) {
      best = latency;
      // Numeric central-difference gradient of the modeled latency.
      double h = std::max(delta / 10.0, 1e-3);
      std::vector<double> grad(knobs.size(), 0.0);
      for (size_t i = 0; i < knobs.size(); ++i) {
        double v = KnobValue(knobs[i]);
        double lo = std::max(knobs[i].min, v - h);
        double hi = std::min(knobs[i].max, v + h);
        if (hi - lo < 1e-9) continue;
        SetKnob(knobs[i], hi);
        double up = LatencyMs(snapshot, rate);
        SetKnob(knobs[i], lo);
        double down = LatencyMs(snapshot, rate);
        SetKnob(knobs[i], v);
        grad[i] = (up - down) / (hi - lo);
      }

      // Backtracking step: halve delta until the move improves the model and
      // stays within budget.
      for (size_t i = 0; i < knobs.size(); ++i) saved[i] = KnobValue(knobs[i]);
      bool accepted = false;
      double step = delta;
      for (int attempt = 0; attempt < 20; ++attempt) {
        for (size_t i = 0; i < knobs.size(); ++i) {
          SetKnob(knobs[i], saved[i] - step * grad[i]);
        }
        double candidate = LatencyMs(snapshot, rate);
        if (candidate < latency && usage_ok()) {
          latency = candidate;
          accepted = true;
          delta = std::max(step * config.delta_growth, 1e-4);
          break;
        }
        step /= 2;
      }
      if (!accepted) {
        for (size_t i = 0; i < knobs.size(); ++i) SetKnob(knobs[i], saved[i]);
        break;
      }
      result.steps++;
    }
  }

  // Round to integers, then repair any budget excess introduced by rounding
  // by walking the largest tunable knobs down.
  for (auto& k : knobs) SetKnob(k, std::round(KnobValue(k)));
  if (config.integer_polish && !result.budget_infeasible) {
    // Greedy local search over single-knob moves and pairwise exchanges
    // (a binding budget often requires trading one knob against another).
    for (int round = 0; round < 200; ++round) {
      double current = LatencyMs(snapshot, rate);
      double best_gain = 0;
      std::vector<std::pair<Knob*, double>> best_move;
      auto consider = [&](std::vector<std::pair<Knob*, double>> move) {
        std::vector<double> saved_values;
        for (auto& [k, v] : move) {
          saved_values.push_back(KnobValue(*k));
          if (v < k->min || v > k->max) {
            for (size_t u = 0; u < saved_values.size(); ++u) {
              SetKnob(*move[u].first, saved_values[u]);
            }
            return;
          }
          SetKnob(*k, v);
        }
        double l = LatencyMs(snapshot, rate);
        bool feasible = usage_ok();
        for (size_t u = 0; u < move.size(); ++u) {
          SetKnob(*move[u].first, saved_values[u]);
        }
        if (feasible && current - l > best_gain) {
          best_gain = current - l;
          best_move = std::move(move);
        }
      };
      for (auto& k : knobs) {
        for (double dv : {1.0, -1.0, 2.0, -2.0}) {
          consider({{&k, KnobValue(k) + dv}});
        }
      }
      for (auto& a : knobs) {
        for (auto& b : knobs) {
          if (&a == &b) continue;
          consider({{&a, KnobValue(a) + 1}, {&b, KnobValue(b) - 1}});
          consider({{&a, KnobValue(a) + 2}, {&b, KnobValue(b) - 1}});
          consider({{&a, KnobValue(a) + 1}, {&b, KnobValue(b) - 2}});
        }
      }
      if (best_move.empty() || best_gain <= 1e-9) break;
      for (auto& [k, v] : best_move) SetKnob(*k, v);
    }
  }
  for (int guard = 0; guard < 10000; ++guard) {
    double cpu = 0, ram = 0;
    SumUsage(snapshot, cpu, ram);
    bool cpu_over = cpu > budget.cpu_parallelism;
    bool ram_over = ram > budget.ram_bytes;
    if (!cpu_over && !ram_over) break;
    Knob* largest = nullptr;
    for (auto& k : knobs) {
      if (KnobValue(k) <= k.min) continue;
      if (cpu_over && !k.is_parallelism) continue;
      if (!largest || KnobValue(k) > KnobValue(*largest)) largest = &k;
    }
    if (!largest) {
      result.budget_infeasible = true;
      break;
    }
    SetKnob(*largest, KnobValue(*largest) - 1);
  }

  result.final_latency_ms = LatencyMs(snapshot, rate);
  SumUsage(snapshot, result.cpu_used, result.ram_used_bytes);
  for (const auto& k : knobs) {
    result.published.push_back(
        {k.node->path, k.is_parallelism ? "parallelism" : "buffer_size",
         static_cast<int64_t>(std::llround(KnobValue(k)))});
  }
  return result;
}

Tuner::Tuner(std::shared_ptr<Model> model, Budget budget, TunerConfig config)
    : model_(std::move(model)),
      budget_(budget),
      config_(config),
      period_(config.initial_period) {}

Tuner::~Tuner() { Stop(); }

void Tuner::Start() {
  std::lock_guard lock(mu_);
  if (!stop_) return;
  stop_ = false;
  thread_ = std::thread([this] { Loop(); });
}

void Tuner::Stop() {
  {
    std::lock_guard lock(mu_);
    if (stop_) {
      return;
    }
    stop_ = true;
    cv_.notify_all();
  }
  if (thread_.joinable()) thread_.join();
}

void Tuner::Loop() {
  for (;;) {
    RunOnce();
    std::unique_lock lock(mu_);
    if (stop_) return;
    cv_.wait_for(lock, period_, [&] { return stop_; });
    if (stop_) return;
  }
}

void Tuner::RunOnce() {
  auto snapshot = model_->Snapshot();
  if (!snapshot) return;
  uint64_t version = model_->structure_version();
  double rate = model_->RootConsumerRatePerSec();

  TuningResult result = OptimizeParameters(*snapshot, rate, budget_, config_);

  // Publish atomically: runtime nodes observe new values between elements.
  std::map<std::string, int64_t> published;
  for (const auto& setting : result.published) {
    auto node = model_->Find(setting.path);
    if (!node) continue;
    if (setting.name == "parallelism" && node->parallelism()) {
      node->parallelism()->Publish(setting.value);
    } else if (node->buffer()) {
      node->buffer()->Publish(setting.value);
    }
    published[setting.path + "#" + setting.name] = setting.value;
  }

  std::lock_guard lock(mu_);
  optimization_count_++;
  bool structure_changed = version != last_structure_version_;
  // Compare against the latency at the last anchor so slow drifts still
  // trigger once they accumulate past the threshold.
  bool latency_shifted =
      anchor_latency_ms_ > 0 &&
      std::abs(result.initial_latency_ms - anchor_latency_ms_) >
          config_.reset_threshold * anchor_latency_ms_;
  if (structure_changed || latency_shifted) {
    period_ = config_.initial_period;
    anchor_latency_ms_ = result.initial_latency_ms;
  } else if (published == last_published_) {
    period_ = std::min(period_ * 2, config_.max_period);
  }
  if (anchor_latency_ms_ <= 0) anchor_latency_ms_ = result.initial_latency_ms;
  last_structure_version_ = version;
  last_published_ = std::move(published);
  last_result_ = std::move(result);
}

int64_t Tuner::optimization_count() const {
  std::lock_guard lock(mu_);
  return optimization_count_;
}

TuningResult Tuner::last_result() const {
  std::lock_guard lock(mu_);
  return last_result_;
}

std::chrono::milliseconds Tuner::current_period() const {
  std::lock_guard lock(mu_);
  return period_;
}

std::string Tuner::DebugString() const {
  TuningResult result = last_result();
  std::ostringstream os;
  os << "optimizations: " << optimization_count() << "\n";
  os << "period: " << current_period().count() << " ms\n";
  os << "model latency: " << result.initial_latency_ms << " -> "
     << result.final_latency_ms << " ms in " << result.steps << " steps\n";
  os << "usage: cpu " << result.cpu_used << ", ram "
     << result.ram_used_bytes / (1024.0 * 1024.0) << " MiB"
     << (result.budget_infeasible ? " (budget infeasible)" : "") << "\n";
  for (const auto& setting : result.published) {
    os << "  " << setting.path << " " << setting.name << " = "
       << setting.value << "\n";
  }
  os << model_->DebugString();
  return os.str();
}

}  // namespace datapipe::autotune
