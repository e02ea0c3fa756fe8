#pragma once

#include <string>
#include <vector>

#include "tstok/errors.hpp"

namespace tstok {

// Multivariate raw series: C >= 1 channels, each of length >= 1, values
// finite. Channels may have unequal lengths.
struct RawSeries {
    std::vector<std::vector<double>> channels;
};

// Grid of TS token values on [-1, +1] with step epsilon plus the ID range
// the tokens occupy in the combined vocabulary.
struct TokenVocab {
    double epsilon = 0.0;
    int n_tokens = 0;
    int base_offset = 0;

    // Grid value of token index i.
    double value(int index) const { return -1.0 + static_cast<double>(index) * epsilon; }
};

struct NormalizedSeries {
    std::vector<std::vector<double>> channels;
    double scale = 1.0;
};

struct QuantizedSeries {
    std::vector<std::vector<int>> channels;
    double scale = 1.0;
};

// Per-channel summary computed on raw (unnormalized) values. std_dev uses
// divisor L (population form); mid is the element at index floor(L/2).
struct ChannelStats {
    double max = 0.0;
    double min = 0.0;
    double mean = 0.0;
    double std_dev = 0.0;
    double left = 0.0;
    double right = 0.0;
    double mid = 0.0;
};

using SeriesStats = std::vector<ChannelStats>;

enum class PromptTemplate { Tsqa, MmtsInwild, TsExam, Bedtime };

struct PromptSpec {
    std::string background;
    std::string question;
    std::string instruction;
    PromptTemplate template_id = PromptTemplate::Tsqa;
};

PromptTemplate parse_template(const std::string& name);

// n_tokens = ceil(2/epsilon) + 1, grid v_i = -1 + i*epsilon.
TokenVocab build_vocab(double epsilon, int base_offset);

// Scales every channel by the global max-abs value; scale 1 when the
// series is identically zero.
NormalizedSeries normalize(const RawSeries& series);

// Nearest-neighbor quantization onto the vocab grid; ties round to the
// even index. Values outside [-1 - eps/2, 1 + eps/2] are rejected.
QuantizedSeries quantize(const NormalizedSeries& norm, const TokenVocab& vocab);

RawSeries detokenize(const QuantizedSeries& quantized, const TokenVocab& vocab);

SeriesStats compute_stats(const RawSeries& series);

// Number of decimals used for token text so that rendering is exact on
// the grid (3 for epsilon = 0.001, 1 for 0.5, 0 for 1.0).
int token_text_decimals(double epsilon);

std::string format_stat(double value);
std::string format_grid_value(double value, int decimals);

// The time-series information block: stats lines, shared scale factor,
// and each channel as "|<v>|<v>|...|".
std::string render_series_block(const RawSeries& series, const TokenVocab& vocab);

// Full prompt: series block plus question/options/instruction sections of
// the selected template.
std::string render_prompt(const RawSeries& series, const TokenVocab& vocab, const PromptSpec& spec);

// Token IDs (base_offset + grid index), channels joined by separator_id.
std::vector<int> encode_ids(const QuantizedSeries& quantized, const TokenVocab& vocab,
                            int separator_id);

}  // namespace tstok
