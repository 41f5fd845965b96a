#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "hita/ar.hpp"
#include "hita/config.hpp"
#include "hita/tokenizer.hpp"

namespace hita {

// File layout: "HITACKPT", u32 format version, u64 manifest length, JSON
// manifest, then the raw little-endian tensor payload.
struct ParameterEntry {
    std::string name;
    std::vector<int64_t> shape;
    std::string dtype;    // "float32" or "int64"
    uint64_t offset = 0;  // into the payload
    uint64_t bytes = 0;
};

struct CheckpointManifest {
    uint32_t format_version = 1;
    std::string kind;    // "tokenizer" or "ar"
    std::string fingerprint;
    std::map<std::string, std::string> config;
    int64_t step = 0;
    std::vector<ParameterEntry> parameters;
    std::map<std::string, double> usage;
};

constexpr uint32_t kCheckpointVersion = 1;

// Fingerprint used for a checkpoint kind: tokenizer or AR.
auto checkpoint_fingerprint(const std::string& kind, const PipelineConfig& config) -> std::string;

// Parameters and buffers of `module` under their dotted names.
void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module, const std::string& kind,
                     const PipelineConfig& config, int64_t step, const std::map<std::string, double>& usage = {});

auto read_manifest(const std::filesystem::path& path) -> CheckpointManifest;

// Throws DependencyError when the file is missing, has the wrong kind, or was
// written under a config with a different fingerprint.
auto load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module, const std::string& kind,
                     const PipelineConfig& config) -> CheckpointManifest;

// Rebuilds a config from the manifest's canonical key/value map.
auto manifest_config(const CheckpointManifest& manifest) -> PipelineConfig;

// Config stored in the checkpoint, then `overrides` (key=value), then the
// weights. A tokenizer-shaping override makes the fingerprint check fail.
auto load_tokenizer(const std::filesystem::path& path, const std::vector<std::string>& overrides = {})
    -> HolisticTokenizer;
auto load_ar(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) -> ARModel;

}    // namespace hita
