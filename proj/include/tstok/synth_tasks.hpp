#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tstok/specials.hpp"
#include "tstok/ts_processor.hpp"

namespace tstok {

enum class TaskKind { Trend, Seasonality, Volatility, Outliers };
inline constexpr int kNumTasks = 4;

std::string task_name(TaskKind task);
TaskKind parse_task(const std::string& name);

struct SpikeSpec {
    int position = 0;
    double magnitude = 0.0;
};

// Generator parameters kept for auditing: y_t = slope*t/L +
// amplitude*sin(2*pi*t/period + phase) + sigma*eta_t + spikes.
struct GeneratorParams {
    double slope = 0.0;
    double period = 16.0;
    double amplitude = 0.0;
    double sigma = 0.0;
    double phase = 0.0;
    std::vector<SpikeSpec> spikes;
    int length = 0;
};

// Class count per task. Label semantics:
//   Trend:       0 up, 1 down, 2 flat
//   Seasonality: 0 none, 1 short period, 2 long period
//   Volatility:  0 low, 1 mid, 2 high
//   Outliers:    0/1/2 spikes
inline constexpr int kNumClasses = 3;

struct SyntheticSample {
    RawSeries series;  // single channel
    TaskKind task = TaskKind::Trend;
    int label = 0;
    GeneratorParams params;
};

// Deterministic in (task, count, seed); labels balanced within +-1 by
// round-robin assignment; per-sample RNG streams derive from the index.
std::vector<SyntheticSample> generate(TaskKind task, int count, std::uint64_t seed);

struct EncodedSample {
    std::vector<int> input_ids;
    int target_id = 0;
    int ask_pos = 0;
    TaskKind task = TaskKind::Trend;
    int label = 0;
};

// [BOS, task token, SEP, TS ids..., SEP, ASK] with the option token of the
// label as target. Series longer than context - 5 are center-cropped.
EncodedSample encode_sample(const SyntheticSample& sample, const TokenVocab& vocab,
                            int context_len);

}  // namespace tstok
