#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace hita {

enum class FusionMode { select, partial, full };

auto to_string(FusionMode mode) -> std::string;
auto parse_fusion_mode(const std::string& text) -> FusionMode;

// Every knob of the tokenizer, the AR model and the training loops. Values are
// plain data; validate() enforces the geometric invariants the rest of the
// library relies on.
struct PipelineConfig {
    // geometry
    int64_t image_size = 32;
    int64_t downsample_factor = 8;
    int64_t num_queries = 4;
    int64_t selection_k = 2;
    bool use_queries = true;

    // codebooks
    int64_t patch_code_dim = 8;
    int64_t holistic_code_dim = 12;
    int64_t codebook_size = 64;
    bool codebook_reseed = false;
    std::string codebook_init = "data";    // "random" or "data" (rows drawn from the first batch)

    // tokenizer network
    int64_t transformer_depth = 2;
    int64_t embed_dim = 64;
    std::vector<int64_t> channel_schedule;    // empty = derived from downsample_factor
    // "wide": 3x3 convs plus a mid block at every decoder stage. "local": 1x1 convs
    // until the last upsampling stage, so each output pixel sees few grid slots.
    std::string decoder_context = "local";
    std::string semantic_provider = "frozen-random-conv";
    std::string perceptual_provider = "frozen-random-conv";
    std::string consistency_provider = "frozen-random-conv";
    FusionMode fusion_mode = FusionMode::select;

    // tokenizer objective
    double alpha = 1.0;
    double lambda = 1.0;
    double beta = 0.25;
    double lambda_g = 0.0;
    bool discriminator = false;

    // tokenizer optimisation
    int64_t batch_size = 64;
    double learning_rate = 1e-4;
    int64_t warmup_steps = 0;
    double grad_clip = 1.0;

    // AR model
    int64_t num_classes = 4;
    int64_t ar_layers = 2;
    int64_t ar_width = 128;
    int64_t ar_heads = 4;
    double ar_dropout = 0.0;
    double ar_learning_rate = 1e-3;
    int64_t ar_batch_size = 32;
    double class_dropout_prob = 0.1;

    // sampling
    double cfg_scale = 1.0;
    double temperature = 1.0;
    int64_t top_k = 0;

    // data
    int64_t synthetic_count = 1024;
    std::string resize_filter = "bilinear";

    uint64_t seed = 0;

    static auto desk() -> PipelineConfig;
    static auto full() -> PipelineConfig;

    [[nodiscard]] auto grid_side() const -> int64_t { return image_size / downsample_factor; }
    [[nodiscard]] auto grid_size() const -> int64_t { return grid_side() * grid_side(); }
    // Holistic positions actually present in the token sequence (0 with queries off).
    [[nodiscard]] auto holistic_count() const -> int64_t { return use_queries ? num_queries : 0; }
    [[nodiscard]] auto sequence_length() const -> int64_t { return holistic_count() + grid_size(); }
    [[nodiscard]] auto downsample_stages() const -> int64_t;
    [[nodiscard]] auto channels() const -> std::vector<int64_t>;
    [[nodiscard]] auto attention_heads() const -> int64_t;

    // Throws ValidationError naming the violated constraint.
    void validate() const;

    // Throws ConfigError naming the key on unknown keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    [[nodiscard]] auto get(const std::string& key) const -> std::string;

    // Canonical key -> value text for every field, sorted by key.
    [[nodiscard]] auto canonical() const -> std::map<std::string, std::string>;

    // Hash over the keys that shape tokenizer parameters / token layout.
    [[nodiscard]] auto tokenizer_fingerprint() const -> uint64_t;
    // Tokenizer keys plus the AR architecture keys.
    [[nodiscard]] auto ar_fingerprint() const -> uint64_t;
};

auto parse_config_text(const std::string& text, PipelineConfig base = PipelineConfig::desk()) -> PipelineConfig;

// Reads a flat `key = value` file (`#` comments) over the desk defaults and
// validates the result.
auto load_config(const std::filesystem::path& path) -> PipelineConfig;

// Applies `key=value` overrides in order, then validates.
void apply_overrides(PipelineConfig& config, const std::vector<std::string>& overrides);

auto fingerprint_hex(uint64_t fingerprint) -> std::string;

}    // namespace hita
