#include "tstok/ts_processor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace tstok {

namespace {

void validate_series(const RawSeries& series) {
    if (series.channels.empty()) {
        throw DataError("series needs at least one channel");
    }
    for (const auto& channel : series.channels) {
        if (channel.empty()) {
            throw DataError("channel needs at least one value");
        }
        for (const double v : channel) {
            if (!std::isfinite(v)) {
                throw DataError("non-finite value in series");
            }
        }
    }
}

std::string format_double(const char* fmt, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, value);
    return buf;
}

}  // namespace

PromptTemplate parse_template(const std::string& name) {
    if (name == "tsqa") return PromptTemplate::Tsqa;
    if (name == "mmts") return PromptTemplate::MmtsInwild;
    if (name == "exam") return PromptTemplate::TsExam;
    if (name == "bedtime") return PromptTemplate::Bedtime;
    throw ConfigError("unknown prompt template: " + name);
}

TokenVocab build_vocab(double epsilon, int base_offset) {
    if (!(epsilon > 0.0) || epsilon > 1.0) {
        throw ConfigError("epsilon must lie in (0, 1]");
    }
    if (base_offset < 0) {
        throw ConfigError("base_offset must be non-negative");
    }
    TokenVocab vocab;
    vocab.epsilon = epsilon;
    vocab.n_tokens = static_cast<int>(std::ceil(2.0 / epsilon)) + 1;
    vocab.base_offset = base_offset;
    return vocab;
}

NormalizedSeries normalize(const RawSeries& series) {
    validate_series(series);
    double max_abs = 0.0;
    for (const auto& channel : series.channels) {
        for (const double v : channel) {
            max_abs = std::max(max_abs, std::fabs(v));
        }
    }
    NormalizedSeries out;
    out.scale = max_abs > 0.0 ? max_abs : 1.0;
    out.channels.reserve(series.channels.size());
    for (const auto& channel : series.channels) {
        auto& dst = out.channels.emplace_back();
        dst.reserve(channel.size());
        for (const double v : channel) {
            dst.push_back(v / out.scale);
        }
    }
    return out;
}

QuantizedSeries quantize(const NormalizedSeries& norm, const TokenVocab& vocab) {
    const double eps = vocab.epsilon;
    const double lo = -1.0 - eps / 2.0;
    const double hi = 1.0 + eps / 2.0;
    QuantizedSeries out;
    out.scale = norm.scale;
    out.channels.reserve(norm.channels.size());
    for (const auto& channel : norm.channels) {
        auto& dst = out.channels.emplace_back();
        dst.reserve(channel.size());
        for (const double v : channel) {
            if (!(v >= lo && v <= hi)) {
                throw DataError("value outside quantization range");
            }
            // nearbyint rounds half to even under the default FP mode.
            const double idx = std::nearbyint((v + 1.0) / eps);
            const int clamped =
                static_cast<int>(std::clamp(idx, 0.0, static_cast<double>(vocab.n_tokens - 1)));
            dst.push_back(clamped);
        }
    }
    return out;
}

RawSeries detokenize(const QuantizedSeries& quantized, const TokenVocab& vocab) {
    RawSeries out;
    out.channels.reserve(quantized.channels.size());
    for (const auto& channel : quantized.channels) {
        auto& dst = out.channels.emplace_back();
        dst.reserve(channel.size());
        for (const int idx : channel) {
            if (idx < 0 || idx >= vocab.n_tokens) {
                throw DataError("token index out of range");
            }
            dst.push_back(vocab.value(idx) * quantized.scale);
        }
    }
    return out;
}

SeriesStats compute_stats(const RawSeries& series) {
    validate_series(series);
    SeriesStats stats;
    stats.reserve(series.channels.size());
    for (const auto& channel : series.channels) {
        ChannelStats cs;
        const std::size_t len = channel.size();
        cs.max = *std::max_element(channel.begin(), channel.end());
        cs.min = *std::min_element(channel.begin(), channel.end());
        double sum = 0.0;
        for (const double v : channel) {
            sum += v;
        }
        cs.mean = sum / static_cast<double>(len);
        double sq = 0.0;
        for (const double v : channel) {
            const double d = v - cs.mean;
            sq += d * d;
        }
        cs.std_dev = std::sqrt(sq / static_cast<double>(len));
        cs.left = channel.front();
        cs.right = channel.back();
        cs.mid = channel[len / 2];
        stats.push_back(cs);
    }
    return stats;
}

int token_text_decimals(double epsilon) {
    // Smallest number of decimals that renders every grid point exactly.
    for (int d = 0; d <= 9; ++d) {
        const double scaled = epsilon * std::pow(10.0, d);
        if (std::fabs(scaled - std::nearbyint(scaled)) < 1e-9 * std::max(1.0, scaled)) {
            return d;
        }
    }
    return 9;
}

std::string format_stat(double value) { return format_double("%.3f", value); }

std::string format_grid_value(double value, int decimals) {
    char fmt[8];
    std::snprintf(fmt, sizeof(fmt), "%%.%df", decimals);
    std::string text = format_double(fmt, value);
    // Strip the sign from a value that rounds to zero.
    if (text.find_first_not_of("-0.") == std::string::npos && text[0] == '-') {
        text.erase(0, 1);
    }
    return text;
}

std::string render_series_block(const RawSeries& series, const TokenVocab& vocab) {
    const SeriesStats stats = compute_stats(series);
    const NormalizedSeries norm = normalize(series);
    const QuantizedSeries quantized = quantize(norm, vocab);
    const int decimals = token_text_decimals(vocab.epsilon);
    const std::size_t n = series.channels.size();

    std::ostringstream out;
    out << "Given " << n << " time series:\n";
    for (std::size_t j = 0; j < n; ++j) {
        const ChannelStats& cs = stats[j];
        out << "Time series " << (j + 1) << " is of length " << series.channels[j].size()
            << ", with statistical information:{max:" << format_stat(cs.max)
            << ", min:" << format_stat(cs.min) << ", mean:" << format_stat(cs.mean)
            << ", std:" << format_stat(cs.std_dev) << ", left:" << format_stat(cs.left)
            << ", right:" << format_stat(cs.right) << ", mid:" << format_stat(cs.mid) << "}.\n";
    }
    out << "\nWe normalize all time series values into range [-1.0, +1.0], "
        << "with the same scale factor " << format_stat(quantized.scale) << ".\n"
        << "After scaling, the " << n
        << " time series are below (\"|\" is the separator between values):\n";
    for (std::size_t j = 0; j < n; ++j) {
        out << "Time series " << (j + 1) << " is: |";
        for (const int idx : quantized.channels[j]) {
            out << "<" << format_grid_value(vocab.value(idx), decimals) << ">|";
        }
        out << ".\n";
    }
    return out.str();
}

std::string render_prompt(const RawSeries& series, const TokenVocab& vocab,
                          const PromptSpec& spec) {
    const std::string block = render_series_block(series, vocab);
    std::ostringstream out;
    out << "## Time Series Information:\n\n";
    if (!spec.background.empty() && spec.template_id == PromptTemplate::MmtsInwild) {
        out << block << "\n" << spec.background << "\n\n";
    } else {
        if (!spec.background.empty()) {
            out << spec.background << "\n";
        }
        out << block << "\n";
    }
    out << "## Question:\n\n" << spec.question << "\n\n";
    switch (spec.template_id) {
        case PromptTemplate::Tsqa:
        case PromptTemplate::MmtsInwild:
            out << "## Options:\n\n"
                << spec.instruction << "\n\n"
                << "## Instruction:\n\n"
                << "Output the option letter followed by the full option text exactly as "
                   "listed in Options. Do not add explanations or generate any additional "
                   "content.\n";
            break;
        case PromptTemplate::TsExam:
            out << "## Options:\n\n"
                << spec.instruction << "\n\n"
                << "## Instruction:\n\n"
                << "For a given question, you should exactly choose one answer from the "
                   "options, and output the full answer. Don't generate anything else.\n";
            break;
        case PromptTemplate::Bedtime:
            out << "## Instruction:\n\n";
            if (spec.instruction.empty()) {
                out << "Output a brief natural-language description of the given time "
                       "series. Do not generate analysis or any additional content.\n";
            } else {
                out << spec.instruction << "\n";
            }
            break;
    }
    return out.str();
}

std::vector<int> encode_ids(const QuantizedSeries& quantized, const TokenVocab& vocab,
                            int separator_id) {
    std::vector<int> ids;
    std::size_t total = quantized.channels.empty() ? 0 : quantized.channels.size() - 1;
    for (const auto& channel : quantized.channels) {
        total += channel.size();
    }
    ids.reserve(total);
    for (std::size_t j = 0; j < quantized.channels.size(); ++j) {
        if (j > 0) {
            ids.push_back(separator_id);
        }
        for (const int idx : quantized.channels[j]) {
            if (idx < 0 || idx >= vocab.n_tokens) {
                throw DataError("token index out of range");
            }
            ids.push_back(vocab.base_offset + idx);
        }
    }
    return ids;
}

}  // namespace tstok
