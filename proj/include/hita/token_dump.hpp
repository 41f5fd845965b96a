#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "hita/ar.hpp"
#include "hita/tokenizer.hpp"

namespace hita {

// One image's tokens. On disk every field is a little-endian 32-bit word:
//   M, G, N, fingerprint low word, fingerprint high word, label,
//   then M holistic ids and G patch ids.
// An absent label is stored as 0xFFFFFFFF.
struct TokenRecord {
    uint32_t holistic_count = 0;
    uint32_t grid_size = 0;
    uint32_t codebook_size = 0;
    uint64_t fingerprint = 0;
    std::optional<uint32_t> label;
    std::vector<uint32_t> holistic;
    std::vector<uint32_t> patch;
};

void write_token_dumps(const std::filesystem::path& path, const std::vector<TokenRecord>& records);
// Throws InputError on truncated or inconsistent records.
auto read_token_dumps(const std::filesystem::path& path) -> std::vector<TokenRecord>;

auto make_records(const TokenIds& ids, const std::optional<torch::Tensor>& labels, const PipelineConfig& config)
    -> std::vector<TokenRecord>;
auto make_record(const TokenSequence& sequence, const PipelineConfig& config) -> TokenRecord;

// Checks every record against the config layout and fingerprint, then stacks
// them into a dataset (unlabelled records get the null class).
auto to_dataset(const std::vector<TokenRecord>& records, const PipelineConfig& config) -> TokenDataset;

// Tokenizes a whole corpus in eval mode.
auto tokenize_corpus(HolisticTokenizer& tokenizer, const Corpus& corpus, int64_t batch_size = 64) -> TokenDataset;

}    // namespace hita
