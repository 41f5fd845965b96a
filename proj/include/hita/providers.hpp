#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "hita/config.hpp"
#include "hita/data.hpp"

namespace hita {

// Fixed-seed random conv net; never trained. With `relu = false` the net is
// linear in its input (no bias, no nonlinearity).
class FrozenConvNet {
public:
    FrozenConvNet(std::vector<int64_t> channels, bool relu, uint64_t seed);

    // Feature maps after each conv layer, NCHW.
    [[nodiscard]] auto feature_maps(const torch::Tensor& nchw) const -> std::vector<torch::Tensor>;
    [[nodiscard]] auto output_channels() const -> int64_t { return channels_.back(); }
    // Sum of all weight entries; used to prove the weights never change.
    [[nodiscard]] auto checksum() const -> double;

private:
    std::vector<int64_t> channels_;
    std::vector<torch::Tensor> weights_;
    std::vector<torch::Tensor> biases_;
    bool relu_;
};

// B x S x F frozen features from a registered provider.
struct SemanticFeatures {
    torch::Tensor features;
    std::string provider_id;

    [[nodiscard]] auto token_count() const -> int64_t { return features.size(1); }
};

class SemanticProvider {
public:
    virtual ~SemanticProvider() = default;
    [[nodiscard]] virtual auto id() const -> std::string = 0;
    // Feature width F (0 for the empty provider).
    [[nodiscard]] virtual auto feature_dim() const -> int64_t = 0;
    [[nodiscard]] virtual auto extract(const ImageBatch& images) const -> SemanticFeatures = 0;
    [[nodiscard]] virtual auto checksum() const -> double { return 0.0; }
};

// Ids: "none", "frozen-random-conv", "external:<exchange-dir>:<F>". The
// external adapter writes request.npy (B x H x W x 3) into the exchange dir,
// runs `$HITA_PROVIDER_CMD <exchange-dir>` when set, and reads response.npy
// (B x S x F).
auto make_semantic_provider(const std::string& id, const PipelineConfig& config) -> std::shared_ptr<SemanticProvider>;

class PerceptualProvider {
public:
    virtual ~PerceptualProvider() = default;
    [[nodiscard]] virtual auto id() const -> std::string = 0;
    // Non-negative distance; 0 when the features coincide. Differentiable in both inputs.
    [[nodiscard]] virtual auto distance(const torch::Tensor& x, const torch::Tensor& y) const -> torch::Tensor = 0;
};

// Ids: "off", "frozen-random-conv".
auto make_perceptual_provider(const std::string& id) -> std::shared_ptr<PerceptualProvider>;

class PooledFeatureProvider {
public:
    virtual ~PooledFeatureProvider() = default;
    [[nodiscard]] virtual auto id() const -> std::string = 0;
    // B x F pooled features of B x H x W x 3 pixels.
    [[nodiscard]] virtual auto pooled(const torch::Tensor& pixels) const -> torch::Tensor = 0;
};

// Ids: "frozen-random-conv", "linear".
auto make_pooled_provider(const std::string& id) -> std::shared_ptr<PooledFeatureProvider>;

// Minimal float32 .npy reader/writer (C order, little-endian).
void write_npy(const std::filesystem::path& path, const torch::Tensor& array);
auto read_npy(const std::filesystem::path& path) -> torch::Tensor;

}    // namespace hita
