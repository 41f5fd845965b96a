#include "hita/token_dump.hpp"

#include <fstream>

#include "hita/errors.hpp"

namespace hita {

namespace {

constexpr uint32_t kNoLabel = 0xFFFFFFFFU;

void put(std::ostream& out, uint32_t value) {
    const char bytes[4] = {static_cast<char>(value & 0xFF), static_cast<char>((value >> 8) & 0xFF),
                           static_cast<char>((value >> 16) & 0xFF), static_cast<char>((value >> 24) & 0xFF)};
    out.write(bytes, 4);
}

auto get(std::istream& in, uint32_t& value) -> bool {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        return false;
    }
    value = bytes[0] | (bytes[1] << 8) | (bytes[2] << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
    return true;
}

}    // namespace

void write_token_dumps(const std::filesystem::path& path, const std::vector<TokenRecord>& records) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write token dump '" + path.string() + "'");
    }
    for (const auto& r : records) {
        if (r.holistic.size() != r.holistic_count || r.patch.size() != r.grid_size) {
            throw ShapeError("token record id counts do not match its header");
        }
        put(out, r.holistic_count);
        put(out, r.grid_size);
        put(out, r.codebook_size);
        put(out, static_cast<uint32_t>(r.fingerprint & 0xFFFFFFFFULL));
        put(out, static_cast<uint32_t>(r.fingerprint >> 32));
        put(out, r.label.value_or(kNoLabel));
        for (auto id : r.holistic) {
            put(out, id);
        }
        for (auto id : r.patch) {
            put(out, id);
        }
    }
}

auto read_token_dumps(const std::filesystem::path& path) -> std::vector<TokenRecord> {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DependencyError("token dump '" + path.string() + "' not found");
    }
    std::vector<TokenRecord> records;
    while (in.peek() != std::char_traits<char>::eof()) {
        TokenRecord r;
        uint32_t lo = 0;
        uint32_t hi = 0;
        uint32_t label = 0;
        if (!get(in, r.holistic_count) || !get(in, r.grid_size) || !get(in, r.codebook_size) || !get(in, lo) ||
            !get(in, hi) || !get(in, label)) {
            throw InputError("token dump '" + path.string() + "': truncated header");
        }
        r.fingerprint = (static_cast<uint64_t>(hi) << 32) | lo;
        if (label != kNoLabel) {
            r.label = label;
        }
        r.holistic.resize(r.holistic_count);
        r.patch.resize(r.grid_size);
        for (auto& id : r.holistic) {
            if (!get(in, id)) {
                throw InputError("token dump '" + path.string() + "': truncated holistic ids");
            }
        }
        for (auto& id : r.patch) {
            if (!get(in, id)) {
                throw InputError("token dump '" + path.string() + "': truncated patch ids");
            }
        }
        for (auto id : r.holistic) {
            if (id >= r.codebook_size) {
                throw InputError("token dump '" + path.string() + "': holistic id out of range");
            }
        }
        for (auto id : r.patch) {
            if (id >= r.codebook_size) {
                throw InputError("token dump '" + path.string() + "': patch id out of range");
            }
        }
        records.push_back(std::move(r));
    }
    return records;
}

auto make_records(const TokenIds& ids, const std::optional<torch::Tensor>& labels, const PipelineConfig& config)
    -> std::vector<TokenRecord> {
    auto hol = ids.holistic.to(torch::kInt64).contiguous();
    auto pat = ids.patch.to(torch::kInt64).contiguous();
    std::vector<TokenRecord> out;
    for (int64_t b = 0; b < pat.size(0); ++b) {
        TokenRecord r;
        r.holistic_count = static_cast<uint32_t>(hol.size(1));
        r.grid_size = static_cast<uint32_t>(pat.size(1));
        r.codebook_size = static_cast<uint32_t>(config.codebook_size);
        r.fingerprint = config.tokenizer_fingerprint();
        if (labels) {
            r.label = static_cast<uint32_t>((*labels)[b].item<int64_t>());
        }
        for (int64_t i = 0; i < hol.size(1); ++i) {
            r.holistic.push_back(static_cast<uint32_t>(hol[b][i].item<int64_t>()));
        }
        for (int64_t i = 0; i < pat.size(1); ++i) {
            r.patch.push_back(static_cast<uint32_t>(pat[b][i].item<int64_t>()));
        }
        out.push_back(std::move(r));
    }
    return out;
}

auto make_record(const TokenSequence& sequence, const PipelineConfig& config) -> TokenRecord {
    TokenRecord r;
    r.holistic_count = static_cast<uint32_t>(config.holistic_count());
    r.grid_size = static_cast<uint32_t>(config.grid_size());
    r.codebook_size = static_cast<uint32_t>(config.codebook_size);
    r.fingerprint = config.tokenizer_fingerprint();
    r.label = static_cast<uint32_t>(sequence.class_id);
    for (size_t i = 0; i < sequence.ids.size(); ++i) {
        auto id = static_cast<uint32_t>(sequence.ids[i]);
        (sequence.kinds[i] == TokenKind::holistic ? r.holistic : r.patch).push_back(id);
    }
    return r;
}

auto to_dataset(const std::vector<TokenRecord>& records, const PipelineConfig& config) -> TokenDataset {
    if (records.empty()) {
        throw DataError("token dump holds no records");
    }
    const int64_t m = config.holistic_count();
    const int64_t g = config.grid_size();
    auto ids = torch::empty({static_cast<int64_t>(records.size()), m + g}, torch::kInt64);
    auto labels = torch::empty({static_cast<int64_t>(records.size())}, torch::kInt64);
    auto acc = ids.accessor<int64_t, 2>();
    for (size_t n = 0; n < records.size(); ++n) {
        const auto& r = records[n];
        if (r.holistic_count != m || r.grid_size != g || r.codebook_size != config.codebook_size) {
            throw DependencyError("token dump layout (M=" + std::to_string(r.holistic_count) + ", G=" +
                                  std::to_string(r.grid_size) + ", N=" + std::to_string(r.codebook_size) +
                                  ") does not match the config");
        }
        if (r.fingerprint != config.tokenizer_fingerprint()) {
            throw DependencyError("token dump fingerprint " + fingerprint_hex(r.fingerprint) +
                                  " does not match config fingerprint " +
                                  fingerprint_hex(config.tokenizer_fingerprint()));
        }
        for (int64_t i = 0; i < m; ++i) {
            acc[static_cast<int64_t>(n)][i] = r.holistic[static_cast<size_t>(i)];
        }
        for (int64_t i = 0; i < g; ++i) {
            acc[static_cast<int64_t>(n)][m + i] = r.patch[static_cast<size_t>(i)];
        }
        labels[static_cast<int64_t>(n)] = r.label ? static_cast<int64_t>(*r.label) : config.num_classes;
    }
    return {ids, labels};
}

auto tokenize_corpus(HolisticTokenizer& tokenizer, const Corpus& corpus, int64_t batch_size) -> TokenDataset {
    tokenizer->eval();
    std::vector<torch::Tensor> rows;
    for (int64_t begin = 0; begin < corpus.size(); begin += batch_size) {
        auto batch = corpus.batch(begin, begin + batch_size);
        auto ids = tokenizer->tokenize(batch);
        rows.push_back(torch::cat({ids.holistic, ids.patch}, 1));
    }
    return {torch::cat(rows, 0), corpus.labels.clone()};
}

}    // namespace hita
