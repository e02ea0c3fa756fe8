#include "tstok/synth_tasks.hpp"

#include <algorithm>
#include <cmath>

#include "tstok/rng.hpp"

namespace tstok {

namespace {

constexpr int kLengths[] = {64, 128, 256};

// Noise clamp for the Outliers task so that spike-free samples stay
// within 4 sigma of trend + seasonal by construction.
constexpr double kOutlierNoiseClamp = 3.5;

double pick_sign(Rng& rng) { return rng.uniform() < 0.5 ? -1.0 : 1.0; }

GeneratorParams draw_params(TaskKind task, int label, int length, Rng& rng) {
    GeneratorParams p;
    p.length = length;
    p.phase = rng.uniform(0.0, 2.0 * M_PI);
    switch (task) {
        case TaskKind::Trend:
            switch (label) {
                case 0: p.slope = rng.uniform(0.5, 2.0); break;
                case 1: p.slope = rng.uniform(-2.0, -0.5); break;
                default: p.slope = rng.uniform(-0.05, 0.05); break;
            }
            p.amplitude = rng.uniform(0.1, 0.3);
            p.period = rng.uniform(8.0, 32.0);
            p.sigma = rng.uniform(0.02, 0.08);
            break;
        case TaskKind::Seasonality:
            p.slope = rng.uniform(-0.3, 0.3);
            p.sigma = rng.uniform(0.02, 0.08);
            switch (label) {
                case 0:
                    p.amplitude = 0.0;
                    p.period = 16.0;
                    break;
                case 1:
                    p.amplitude = rng.uniform(0.5, 1.5);
                    p.period = rng.uniform(6.0, 12.0);
                    break;
                default:
                    p.amplitude = rng.uniform(0.5, 1.5);
                    p.period = rng.uniform(24.0, 48.0);
                    break;
            }
            break;
        case TaskKind::Volatility:
            // The trend component dominates the per-sample scale, so the
            // sigma bands stay disjoint after max-abs normalization and the
            // label is decidable from fine token values alone.
            p.slope = pick_sign(rng) * rng.uniform(3.0, 5.0);
            p.amplitude = rng.uniform(0.0, 0.1);
            p.period = rng.uniform(8.0, 32.0);
            switch (label) {
                case 0: p.sigma = rng.uniform(0.02, 0.05); break;
                case 1: p.sigma = rng.uniform(0.15, 0.25); break;
                default: p.sigma = rng.uniform(0.5, 0.8); break;
            }
            break;
        case TaskKind::Outliers: {
            p.slope = rng.uniform(-0.5, 0.5);
            p.amplitude = rng.uniform(0.0, 0.3);
            p.period = rng.uniform(8.0, 32.0);
            p.sigma = rng.uniform(0.05, 0.2);
            const int spikes = label;
            std::vector<int> positions;
            while (static_cast<int>(positions.size()) < spikes) {
                const int pos = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(length)));
                if (std::find(positions.begin(), positions.end(), pos) == positions.end()) {
                    positions.push_back(pos);
                }
            }
            for (const int pos : positions) {
                SpikeSpec spike;
                spike.position = pos;
                spike.magnitude =
                    pick_sign(rng) * rng.uniform(4.0 * p.sigma + 1.0, 4.0 * p.sigma + 3.0);
                p.spikes.push_back(spike);
            }
            break;
        }
    }
    return p;
}

std::vector<double> synthesize(TaskKind task, const GeneratorParams& p, Rng& rng) {
    std::vector<double> values(static_cast<std::size_t>(p.length));
    const double len = static_cast<double>(p.length);
    for (int t = 0; t < p.length; ++t) {
        double eta = rng.normal();
        if (task == TaskKind::Outliers) {
            eta = std::clamp(eta, -kOutlierNoiseClamp, kOutlierNoiseClamp);
        }
        double y = p.slope * static_cast<double>(t) / len +
                   p.amplitude * std::sin(2.0 * M_PI * static_cast<double>(t) / p.period + p.phase) +
                   p.sigma * eta;
        values[static_cast<std::size_t>(t)] = y;
    }
    for (const SpikeSpec& spike : p.spikes) {
        values[static_cast<std::size_t>(spike.position)] += spike.magnitude;
    }
    return values;
}

}  // namespace

std::string task_name(TaskKind task) {
    switch (task) {
        case TaskKind::Trend: return "trend";
        case TaskKind::Seasonality: return "seasonality";
        case TaskKind::Volatility: return "volatility";
        case TaskKind::Outliers: return "outliers";
    }
    throw ConfigError("unknown task kind");
}

TaskKind parse_task(const std::string& name) {
    if (name == "trend") return TaskKind::Trend;
    if (name == "seasonality") return TaskKind::Seasonality;
    if (name == "volatility") return TaskKind::Volatility;
    if (name == "outliers") return TaskKind::Outliers;
    throw ConfigError("unknown task: " + name);
}

std::vector<SyntheticSample> generate(TaskKind task, int count, std::uint64_t seed) {
    if (count < kNumClasses) {
        throw ConfigError("count must be at least the class count");
    }
    std::vector<SyntheticSample> samples;
    samples.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, "sample", static_cast<std::uint64_t>(i)));
        SyntheticSample sample;
        sample.task = task;
        sample.label = i % kNumClasses;
        const int length = kLengths[rng.uniform_index(3)];
        sample.params = draw_params(task, sample.label, length, rng);
        sample.series.channels.push_back(synthesize(task, sample.params, rng));
        samples.push_back(std::move(sample));
    }
    return samples;
}

EncodedSample encode_sample(const SyntheticSample& sample, const TokenVocab& vocab,
                            int context_len) {
    if (sample.series.channels.size() != 1) {
        throw DataError("encode_sample expects a single-channel series");
    }
    const int budget = context_len - 5;
    if (budget < 1) {
        throw DataError("context too small for any series");
    }
    const std::vector<double>& raw = sample.series.channels[0];
    RawSeries cropped;
    if (static_cast<int>(raw.size()) > budget) {
        const std::size_t offset = (raw.size() - static_cast<std::size_t>(budget)) / 2;
        cropped.channels.emplace_back(raw.begin() + static_cast<std::ptrdiff_t>(offset),
                                      raw.begin() + static_cast<std::ptrdiff_t>(offset) +
                                          static_cast<std::ptrdiff_t>(budget));
    } else {
        cropped.channels.push_back(raw);
    }

    const QuantizedSeries quantized = quantize(normalize(cropped), vocab);

    EncodedSample encoded;
    encoded.task = sample.task;
    encoded.label = sample.label;
    encoded.input_ids.reserve(cropped.channels[0].size() + 5);
    encoded.input_ids.push_back(special::kBos);
    encoded.input_ids.push_back(special::kTask0 + static_cast<int>(sample.task));
    encoded.input_ids.push_back(special::kSep);
    for (const int idx : quantized.channels[0]) {
        encoded.input_ids.push_back(vocab.base_offset + idx);
    }
    encoded.input_ids.push_back(special::kSep);
    encoded.input_ids.push_back(special::kAsk);
    encoded.ask_pos = static_cast<int>(encoded.input_ids.size()) - 1;
    if (sample.label < 0 || sample.label >= kNumOptions) {
        throw DataError("label outside the option-token range");
    }
    encoded.target_id = special::kOpt0 + sample.label;
    return encoded;
}

}  // namespace tstok
