#include "hita/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

#include "hita/errors.hpp"

namespace hita {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'I', 'T', 'A', 'C', 'K', 'P', 'T'};

auto dtype_name(const torch::Tensor& t) -> std::string {
    if (t.scalar_type() == torch::kFloat32) {
        return "float32";
    }
    if (t.scalar_type() == torch::kInt64) {
        return "int64";
    }
    throw ValidationError("checkpoint: unsupported dtype " + std::string(c10::toString(t.scalar_type())));
}

auto dtype_of(const std::string& name) -> torch::Dtype {
    if (name == "float32") {
        return torch::kFloat32;
    }
    if (name == "int64") {
        return torch::kInt64;
    }
    throw InputError("checkpoint: unknown dtype '" + name + "'");
}

auto named_tensors(const torch::nn::Module& module) -> std::vector<std::pair<std::string, torch::Tensor>> {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    std::set<std::string> seen;
    for (const auto& item : module.named_parameters(true)) {
        out.emplace_back(item.key(), item.value());
    }
    for (const auto& item : module.named_buffers(true)) {
        out.emplace_back(item.key(), item.value());
    }
    for (const auto& [name, _] : out) {
        if (!seen.insert(name).second) {
            throw StateError("duplicate parameter name '" + name + "'");
        }
    }
    return out;
}

void write_u32(std::ostream& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

void write_u64(std::ostream& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

auto read_uint(std::istream& in, int bytes) -> uint64_t {
    uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) {
            throw InputError("checkpoint: truncated header");
        }
        v |= static_cast<uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

auto open_manifest(std::ifstream& in, const fs::path& path) -> CheckpointManifest {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw InputError("'" + path.string() + "' is not a checkpoint");
    }
    const auto version = static_cast<uint32_t>(read_uint(in, 4));
    if (version != kCheckpointVersion) {
        throw InputError("'" + path.string() + "': unsupported checkpoint version " + std::to_string(version));
    }
    const auto length = read_uint(in, 8);
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    if (!in) {
        throw InputError("'" + path.string() + "': truncated manifest");
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError("'" + path.string() + "': malformed manifest: " + e.what());
    }
    CheckpointManifest m;
    m.format_version = j.at("format_version").get<uint32_t>();
    m.kind = j.at("kind").get<std::string>();
    m.fingerprint = j.at("fingerprint").get<std::string>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    m.step = j.at("step").get<int64_t>();
    m.usage = j.at("usage").get<std::map<std::string, double>>();
    for (const auto& p : j.at("parameters")) {
        m.parameters.push_back({p.at("name").get<std::string>(), p.at("shape").get<std::vector<int64_t>>(),
                                p.at("dtype").get<std::string>(), p.at("offset").get<uint64_t>(),
                                p.at("bytes").get<uint64_t>()});
    }
    return m;
}

}    // namespace

auto checkpoint_fingerprint(const std::string& kind, const PipelineConfig& config) -> std::string {
    if (kind == "tokenizer") {
        return fingerprint_hex(config.tokenizer_fingerprint());
    }
    if (kind == "ar") {
        return fingerprint_hex(config.ar_fingerprint());
    }
    throw ValidationError("unknown checkpoint kind '" + kind + "'");
}

void save_checkpoint(const fs::path& path, const torch::nn::Module& module, const std::string& kind,
                     const PipelineConfig& config, int64_t step, const std::map<std::string, double>& usage) {
    auto tensors = named_tensors(module);
    json params = json::array();
    uint64_t offset = 0;
    std::vector<torch::Tensor> payload;
    for (const auto& [name, tensor] : tensors) {
        auto data = tensor.detach().contiguous();
        const auto bytes = static_cast<uint64_t>(data.numel() * data.element_size());
        params.push_back({{"name", name},
                          {"shape", data.sizes().vec()},
                          {"dtype", dtype_name(data)},
                          {"offset", offset},
                          {"bytes", bytes}});
        offset += bytes;
        payload.push_back(data);
    }
    json manifest = {{"format_version", kCheckpointVersion},
                     {"kind", kind},
                     {"fingerprint", checkpoint_fingerprint(kind, config)},
                     {"config", config.canonical()},
                     {"step", step},
                     {"parameters", params},
                     {"usage", usage}};
    const auto text = manifest.dump();
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write checkpoint '" + path.string() + "'");
    }
    out.write(kMagic, 8);
    write_u32(out, kCheckpointVersion);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : payload) {
        out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
}

auto read_manifest(const fs::path& path) -> CheckpointManifest {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DependencyError("required checkpoint '" + path.string() + "' not found");
    }
    return open_manifest(in, path);
}

auto load_checkpoint(const fs::path& path, torch::nn::Module& module, const std::string& kind,
                     const PipelineConfig& config) -> CheckpointManifest {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DependencyError("required " + kind + " checkpoint '" + path.string() + "' not found");
    }
    auto manifest = open_manifest(in, path);
    if (manifest.kind != kind) {
        throw DependencyError("'" + path.string() + "' holds a " + manifest.kind + " checkpoint, expected " + kind);
    }
    const auto expected = checkpoint_fingerprint(kind, config);
    if (manifest.fingerprint != expected) {
        throw DependencyError("checkpoint '" + path.string() + "' fingerprint " + manifest.fingerprint +
                              " does not match config fingerprint " + expected);
    }
    const auto payload_start = static_cast<uint64_t>(in.tellg());
    auto tensors = named_tensors(module);
    std::map<std::string, const ParameterEntry*> entries;
    for (const auto& e : manifest.parameters) {
        entries[e.name] = &e;
    }
    if (entries.size() != tensors.size()) {
        throw InputError("checkpoint '" + path.string() + "' holds " + std::to_string(entries.size()) +
                         " tensors, model has " + std::to_string(tensors.size()));
    }
    torch::NoGradGuard no_grad;
    for (auto& [name, tensor] : tensors) {
        auto it = entries.find(name);
        if (it == entries.end()) {
            throw InputError("checkpoint '" + path.string() + "' lacks tensor '" + name + "'");
        }
        const auto& e = *it->second;
        if (e.shape != tensor.sizes().vec() || dtype_of(e.dtype) != tensor.scalar_type()) {
            throw ShapeError("checkpoint tensor '" + name + "' has a different shape or dtype");
        }
        auto buffer = torch::empty(e.shape, torch::dtype(dtype_of(e.dtype)));
        if (static_cast<uint64_t>(buffer.numel() * buffer.element_size()) != e.bytes) {
            throw InputError("checkpoint tensor '" + name + "' has an inconsistent byte count");
        }
        in.seekg(static_cast<std::streamoff>(payload_start + e.offset));
        in.read(static_cast<char*>(buffer.data_ptr()), static_cast<std::streamsize>(e.bytes));
        if (!in) {
            throw InputError("checkpoint '" + path.string() + "': truncated payload");
        }
        tensor.copy_(buffer);
    }
    return manifest;
}

auto manifest_config(const CheckpointManifest& manifest) -> PipelineConfig {
    auto config = PipelineConfig::desk();
    for (const auto& [key, value] : manifest.config) {
        config.set(key, value);
    }
    config.validate();
    return config;
}

namespace {

auto checkpoint_config(const std::filesystem::path& path, const std::string& kind,
                       const std::vector<std::string>& overrides) -> PipelineConfig {
    const auto manifest = read_manifest(path);
    if (manifest.kind != kind) {
        throw DependencyError("'" + path.string() + "' holds a " + manifest.kind + " checkpoint, expected " + kind);
    }
    auto config = manifest_config(manifest);
    apply_overrides(config, overrides);
    return config;
}

}    // namespace

auto load_tokenizer(const std::filesystem::path& path, const std::vector<std::string>& overrides)
    -> HolisticTokenizer {
    auto config = checkpoint_config(path, "tokenizer", overrides);
    HolisticTokenizer model(config);
    load_checkpoint(path, *model, "tokenizer", config);
    model->eval();
    return model;
}

auto load_ar(const std::filesystem::path& path, const std::vector<std::string>& overrides) -> ARModel {
    auto config = checkpoint_config(path, "ar", overrides);
    ARModel model(config);
    load_checkpoint(path, *model, "ar", config);
    model->eval();
    return model;
}

}    // namespace hita
