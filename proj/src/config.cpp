#include "hita/config.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "hita/errors.hpp"

namespace hita {

namespace {

enum class KeyScope { tokenizer, ar, runtime };

struct Field {
    const char* name;
    KeyScope scope;
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, const std::string&)> set;
};

auto trim(std::string_view text) -> std::string {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(first, last - first + 1));
}

auto parse_int(const std::string& key, const std::string& value) -> int64_t {
    int64_t out = 0;
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + value + "'");
    }
    return out;
}

auto parse_real(const std::string& key, const std::string& value) -> double {
    try {
        size_t used = 0;
        double out = std::stod(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(value);
        }
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected real number, got '" + value + "'");
    }
}

auto parse_bool(const std::string& key, const std::string& value) -> bool {
    if (value == "true" || value == "1" || value == "on" || value == "yes") {
        return true;
    }
    if (value == "false" || value == "0" || value == "off" || value == "no") {
        return false;
    }
    throw ConfigError("config key '" + key + "': expected boolean, got '" + value + "'");
}

auto format_real(double value) -> std::string {
    std::ostringstream out;
    out.precision(17);
    out << value;
    return out.str();
}

#define HITA_INT_FIELD(member, scope)                                                         \
    Field {                                                                                   \
        #member, scope, [](const PipelineConfig& c) { return std::to_string(c.member); },     \
            [](PipelineConfig& c, const std::string& v) { c.member = parse_int(#member, v); } \
    }
#define HITA_REAL_FIELD(member, scope)                                                         \
    Field {                                                                                    \
        #member, scope, [](const PipelineConfig& c) { return format_real(c.member); },         \
            [](PipelineConfig& c, const std::string& v) { c.member = parse_real(#member, v); } \
    }
#define HITA_BOOL_FIELD(member, scope)                                                            \
    Field {                                                                                       \
        #member, scope, [](const PipelineConfig& c) { return std::string(c.member ? "true" : "false"); }, \
            [](PipelineConfig& c, const std::string& v) { c.member = parse_bool(#member, v); }    \
    }
#define HITA_STRING_FIELD(member, scope)                                         \
    Field {                                                                      \
        #member, scope, [](const PipelineConfig& c) { return c.member; },        \
            [](PipelineConfig& c, const std::string& v) { c.member = v; }        \
    }

auto fields() -> const std::vector<Field>& {
    static const std::vector<Field> table = {
        HITA_INT_FIELD(image_size, KeyScope::tokenizer),
        HITA_INT_FIELD(downsample_factor, KeyScope::tokenizer),
        HITA_INT_FIELD(num_queries, KeyScope::tokenizer),
        HITA_INT_FIELD(selection_k, KeyScope::tokenizer),
        HITA_BOOL_FIELD(use_queries, KeyScope::tokenizer),
        HITA_INT_FIELD(patch_code_dim, KeyScope::tokenizer),
        HITA_INT_FIELD(holistic_code_dim, KeyScope::tokenizer),
        HITA_INT_FIELD(codebook_size, KeyScope::tokenizer),
        HITA_BOOL_FIELD(codebook_reseed, KeyScope::runtime),
        HITA_STRING_FIELD(codebook_init, KeyScope::runtime),
        HITA_INT_FIELD(transformer_depth, KeyScope::tokenizer),
        HITA_INT_FIELD(embed_dim, KeyScope::tokenizer),
        Field{"channel_schedule", KeyScope::tokenizer,
              [](const PipelineConfig& c) {
                  std::string out;
                  for (auto ch : c.channels()) {
                      out += (out.empty() ? "" : ",") + std::to_string(ch);
                  }
                  return out;
              },
              [](PipelineConfig& c, const std::string& v) {
                  c.channel_schedule.clear();
                  std::stringstream in(v);
                  std::string item;
                  while (std::getline(in, item, ',')) {
                      c.channel_schedule.push_back(parse_int("channel_schedule", trim(item)));
                  }
              }},
        HITA_STRING_FIELD(decoder_context, KeyScope::tokenizer),
        HITA_STRING_FIELD(semantic_provider, KeyScope::tokenizer),
        HITA_STRING_FIELD(perceptual_provider, KeyScope::runtime),
        HITA_STRING_FIELD(consistency_provider, KeyScope::runtime),
        Field{"fusion_mode", KeyScope::tokenizer,
              [](const PipelineConfig& c) { return to_string(c.fusion_mode); },
              [](PipelineConfig& c, const std::string& v) {
                  try {
                      c.fusion_mode = parse_fusion_mode(v);
                  } catch (const ValidationError& e) {
                      throw ConfigError(std::string("config key 'fusion_mode': ") + e.what());
                  }
              }},
        HITA_REAL_FIELD(alpha, KeyScope::runtime),
        HITA_REAL_FIELD(lambda, KeyScope::runtime),
        HITA_REAL_FIELD(beta, KeyScope::runtime),
        HITA_REAL_FIELD(lambda_g, KeyScope::runtime),
        HITA_BOOL_FIELD(discriminator, KeyScope::runtime),
        HITA_INT_FIELD(batch_size, KeyScope::runtime),
        HITA_REAL_FIELD(learning_rate, KeyScope::runtime),
        HITA_INT_FIELD(warmup_steps, KeyScope::runtime),
        HITA_REAL_FIELD(grad_clip, KeyScope::runtime),
        HITA_INT_FIELD(num_classes, KeyScope::ar),
        HITA_INT_FIELD(ar_layers, KeyScope::ar),
        HITA_INT_FIELD(ar_width, KeyScope::ar),
        HITA_INT_FIELD(ar_heads, KeyScope::ar),
        HITA_REAL_FIELD(ar_dropout, KeyScope::runtime),
        HITA_REAL_FIELD(ar_learning_rate, KeyScope::runtime),
        HITA_INT_FIELD(ar_batch_size, KeyScope::runtime),
        HITA_REAL_FIELD(class_dropout_prob, KeyScope::runtime),
        HITA_REAL_FIELD(cfg_scale, KeyScope::runtime),
        HITA_REAL_FIELD(temperature, KeyScope::runtime),
        HITA_INT_FIELD(top_k, KeyScope::runtime),
        HITA_INT_FIELD(synthetic_count, KeyScope::runtime),
        HITA_STRING_FIELD(resize_filter, KeyScope::runtime),
        Field{"seed", KeyScope::runtime, [](const PipelineConfig& c) { return std::to_string(c.seed); },
              [](PipelineConfig& c, const std::string& v) {
                  auto parsed = parse_int("seed", v);
                  if (parsed < 0) {
                      throw ConfigError("config key 'seed': expected non-negative integer");
                  }
                  c.seed = static_cast<uint64_t>(parsed);
              }},
    };
    return table;
}

#undef HITA_INT_FIELD
#undef HITA_REAL_FIELD
#undef HITA_BOOL_FIELD
#undef HITA_STRING_FIELD

auto find_field(const std::string& key) -> const Field& {
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.name; });
    if (it == table.end()) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    return *it;
}

// FNV-1a over "key=value\n" lines of the selected scopes.
auto fingerprint(const PipelineConfig& config, bool include_ar) -> uint64_t {
    uint64_t hash = 0xcbf29ce484222325ULL;
    std::vector<const Field*> selected;
    for (const auto& f : fields()) {
        if (f.scope == KeyScope::tokenizer || (include_ar && f.scope == KeyScope::ar)) {
            selected.push_back(&f);
        }
    }
    std::sort(selected.begin(), selected.end(),
              [](const Field* a, const Field* b) { return std::string_view(a->name) < b->name; });
    for (const auto* f : selected) {
        auto line = std::string(f->name) + "=" + f->get(config) + "\n";
        for (unsigned char ch : line) {
            hash ^= ch;
            hash *= 0x100000001b3ULL;
        }
    }
    return hash;
}

void require(bool condition, const std::string& constraint) {
    if (!condition) {
        throw ValidationError(constraint);
    }
}

}    // namespace

auto to_string(FusionMode mode) -> std::string {
    switch (mode) {
        case FusionMode::select: return "select";
        case FusionMode::partial: return "partial";
        case FusionMode::full: return "full";
    }
    return "select";
}

auto parse_fusion_mode(const std::string& text) -> FusionMode {
    if (text == "select") {
        return FusionMode::select;
    }
    if (text == "partial") {
        return FusionMode::partial;
    }
    if (text == "full") {
        return FusionMode::full;
    }
    throw ValidationError("invalid fusion mode '" + text + "' (expected select, partial or full)");
}

auto PipelineConfig::desk() -> PipelineConfig {
    return PipelineConfig{};
}

auto PipelineConfig::full() -> PipelineConfig {
    PipelineConfig c;
    c.image_size = 336;
    c.downsample_factor = 16;
    c.num_queries = 128;
    c.selection_k = 4;
    c.patch_code_dim = 8;
    c.holistic_code_dim = 12;
    c.codebook_size = 16384;
    c.transformer_depth = 3;
    c.embed_dim = 512;
    c.num_classes = 1000;
    c.ar_layers = 12;
    c.ar_width = 768;
    c.ar_heads = 12;
    c.decoder_context = "wide";
    c.codebook_init = "random";
    return c;
}

auto PipelineConfig::downsample_stages() const -> int64_t {
    if (downsample_factor <= 0) {
        return 0;
    }
    return std::countr_zero(static_cast<uint64_t>(downsample_factor));
}

auto PipelineConfig::channels() const -> std::vector<int64_t> {
    if (!channel_schedule.empty()) {
        return channel_schedule;
    }
    std::vector<int64_t> out;
    int64_t width = 16;
    for (int64_t s = 0; s < downsample_stages(); ++s) {
        out.push_back(width);
        width = std::min<int64_t>(width * 2, 128);
    }
    return out;
}

auto PipelineConfig::attention_heads() const -> int64_t {
    return std::max<int64_t>(1, embed_dim / 64);
}

void PipelineConfig::validate() const {
    require(image_size > 0, "image_size must be positive");
    require(downsample_factor > 0, "downsample_factor must be positive");
    require(image_size % downsample_factor == 0, "image_size not divisible by f");
    require(std::has_single_bit(static_cast<uint64_t>(downsample_factor)),
            "downsample_factor must be a power of two");
    require(static_cast<int64_t>(channels().size()) == downsample_stages(),
            "channel_schedule length must equal log2(downsample_factor)");
    for (auto ch : channels()) {
        require(ch > 0 && ch % 4 == 0, "channel_schedule entries must be positive multiples of 4");
    }
    require(num_queries > 0, "num_queries must be positive");
    require(selection_k >= 0, "selection_k must be >= 0");
    require(selection_k <= holistic_count(), "selection_k must not exceed the number of holistic queries");
    require(selection_k <= grid_size(), "selection_k must not exceed the patch grid size G");
    require(patch_code_dim > 0, "patch_code_dim must be positive");
    require(holistic_code_dim > 0, "holistic_code_dim must be positive");
    require(codebook_size > 0, "codebook_size must be positive");
    require(transformer_depth > 0, "transformer_depth must be positive");
    require(embed_dim > 0, "embed_dim must be positive");
    require(embed_dim % attention_heads() == 0, "embed_dim must be divisible by the attention head count");
    require(alpha >= 0 && lambda >= 0 && beta >= 0 && lambda_g >= 0, "loss weights must be non-negative");
    require(cfg_scale >= 1.0, "cfg_scale must be >= 1");
    require(class_dropout_prob >= 0.0 && class_dropout_prob <= 1.0, "class_dropout_prob must lie in [0, 1]");
    require(temperature >= 0.0, "temperature must be >= 0");
    require(top_k >= 0, "top_k must be >= 0");
    require(batch_size > 0 && ar_batch_size > 0, "batch sizes must be positive");
    require(learning_rate > 0 && ar_learning_rate > 0, "learning rates must be positive");
    require(grad_clip > 0, "grad_clip must be positive");
    require(warmup_steps >= 0, "warmup_steps must be >= 0");
    require(codebook_init == "random" || codebook_init == "data", "codebook_init must be random or data");
    require(decoder_context == "wide" || decoder_context == "local", "decoder_context must be wide or local");
    require(num_classes > 0, "num_classes must be positive");
    require(ar_layers > 0 && ar_width > 0 && ar_heads > 0, "AR layers, width and heads must be positive");
    require(ar_width % ar_heads == 0, "ar_width must be divisible by ar_heads");
    require((ar_width / ar_heads) % 4 == 0, "AR head dimension must be divisible by 4 for 2D rotary embedding");
    require(ar_dropout >= 0.0 && ar_dropout < 1.0, "ar_dropout must lie in [0, 1)");
    require(synthetic_count > 0, "synthetic_count must be positive");
    require(resize_filter == "bilinear", "resize_filter must be bilinear");
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
    find_field(key).set(*this, trim(value));
}

auto PipelineConfig::get(const std::string& key) const -> std::string {
    return find_field(key).get(*this);
}

auto PipelineConfig::canonical() const -> std::map<std::string, std::string> {
    std::map<std::string, std::string> out;
    for (const auto& f : fields()) {
        out.emplace(f.name, f.get(*this));
    }
    return out;
}

auto PipelineConfig::tokenizer_fingerprint() const -> uint64_t {
    return fingerprint(*this, false);
}

auto PipelineConfig::ar_fingerprint() const -> uint64_t {
    return fingerprint(*this, true);
}

auto parse_config_text(const std::string& text, PipelineConfig base) -> PipelineConfig {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        auto stripped = trim(line);
        if (stripped.empty()) {
            continue;
        }
        auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + stripped + "'");
        }
        auto key = trim(std::string_view(stripped).substr(0, eq));
        auto value = trim(std::string_view(stripped).substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": missing key");
        }
        base.set(key, value);
    }
    return base;
}

auto load_config(const std::filesystem::path& path) -> PipelineConfig {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path.string() + "'");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    auto config = parse_config_text(buffer.str());
    config.validate();
    return config;
}

void apply_overrides(PipelineConfig& config, const std::vector<std::string>& overrides) {
    for (const auto& item : overrides) {
        auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("override '" + item + "': expected key=value");
        }
        config.set(trim(std::string_view(item).substr(0, eq)), item.substr(eq + 1));
    }
    config.validate();
}

auto fingerprint_hex(uint64_t fingerprint) -> std::string {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[fingerprint & 0xF];
        fingerprint >>= 4;
    }
    return out;
}

}    // namespace hita
