#include "hita/providers.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <regex>

#include <ATen/CPUGeneratorImpl.h>

#include "hita/errors.hpp"

namespace hita {

namespace fs = std::filesystem;

constexpr uint64_t kSemanticSeed = 0x5E3A11CULL;
constexpr uint64_t kPerceptualSeed = 0x9E7C3B1ULL;
constexpr uint64_t kPooledSeed = 0xC0115ULL;

FrozenConvNet::FrozenConvNet(std::vector<int64_t> channels, bool relu, uint64_t seed)
    : channels_(std::move(channels)), relu_(relu) {
    auto generator = at::make_generator<at::CPUGeneratorImpl>(seed);
    int64_t in = 3;
    for (auto out : channels_) {
        const double scale = std::sqrt(2.0 / static_cast<double>(in * 9));
        weights_.push_back(torch::randn({out, in, 3, 3}, generator, torch::kFloat32) * scale);
        biases_.push_back(relu_ ? torch::randn({out}, generator, torch::kFloat32) * 0.1 : torch::Tensor());
        in = out;
    }
}

auto FrozenConvNet::feature_maps(const torch::Tensor& nchw) const -> std::vector<torch::Tensor> {
    std::vector<torch::Tensor> maps;
    auto h = nchw;
    for (size_t i = 0; i < weights_.size(); ++i) {
        h = torch::conv2d(h, weights_[i].to(h.dtype()),
                          biases_[i].defined() ? biases_[i].to(h.dtype()) : torch::Tensor(), 2, 1);
        if (relu_) {
            h = torch::relu(h);
        }
        maps.push_back(h);
    }
    return maps;
}

auto FrozenConvNet::checksum() const -> double {
    double sum = 0.0;
    for (const auto& w : weights_) {
        sum += w.to(torch::kFloat64).sum().item<double>();
    }
    for (const auto& b : biases_) {
        if (b.defined()) {
            sum += b.to(torch::kFloat64).sum().item<double>();
        }
    }
    return sum;
}

namespace {

class NoneSemanticProvider final : public SemanticProvider {
public:
    [[nodiscard]] auto id() const -> std::string override { return "none"; }
    [[nodiscard]] auto feature_dim() const -> int64_t override { return 0; }
    [[nodiscard]] auto extract(const ImageBatch& images) const -> SemanticFeatures override {
        return {torch::zeros({images.size(), 0, 0}, images.pixels.options()), id()};
    }
};

class ConvSemanticProvider final : public SemanticProvider {
public:
    ConvSemanticProvider() : net_({16, 32, 32}, true, kSemanticSeed) {}
    [[nodiscard]] auto id() const -> std::string override { return "frozen-random-conv"; }
    [[nodiscard]] auto feature_dim() const -> int64_t override { return net_.output_channels(); }
    [[nodiscard]] auto extract(const ImageBatch& images) const -> SemanticFeatures override {
        torch::NoGradGuard no_grad;
        auto map = net_.feature_maps(images.nchw().detach()).back();
        return {map.flatten(2).transpose(1, 2).contiguous(), id()};
    }
    [[nodiscard]] auto checksum() const -> double override { return net_.checksum(); }

private:
    FrozenConvNet net_;
};

class ExternalSemanticProvider final : public SemanticProvider {
public:
    ExternalSemanticProvider(fs::path exchange, int64_t feature_dim)
        : exchange_(std::move(exchange)), feature_dim_(feature_dim) {}
    [[nodiscard]] auto id() const -> std::string override { return "external:" + exchange_.string(); }
    [[nodiscard]] auto feature_dim() const -> int64_t override { return feature_dim_; }
    [[nodiscard]] auto extract(const ImageBatch& images) const -> SemanticFeatures override {
        fs::create_directories(exchange_);
        write_npy(exchange_ / "request.npy", images.pixels.detach());
        if (const char* cmd = std::getenv("HITA_PROVIDER_CMD"); cmd != nullptr && *cmd != '\0') {
            const std::string command = std::string(cmd) + " '" + exchange_.string() + "'";
            if (std::system(command.c_str()) != 0) {
                throw DataError("external provider command failed: " + command);
            }
        }
        auto features = read_npy(exchange_ / "response.npy");
        if (features.dim() != 3 || features.size(0) != images.size() || features.size(2) != feature_dim_) {
            throw ShapeError("external provider response must be B x S x " + std::to_string(feature_dim_));
        }
        return {features, id()};
    }

private:
    fs::path exchange_;
    int64_t feature_dim_;
};

class OffPerceptual final : public PerceptualProvider {
public:
    [[nodiscard]] auto id() const -> std::string override { return "off"; }
    [[nodiscard]] auto distance(const torch::Tensor& x, const torch::Tensor&) const -> torch::Tensor override {
        return torch::zeros({}, x.options());
    }
};

// LPIPS-style: channel-normalised feature maps, squared difference summed over
// channels, averaged over space and batch, summed over layers.
class ConvPerceptual final : public PerceptualProvider {
public:
    ConvPerceptual() : net_({16, 32, 32}, true, kPerceptualSeed) {}
    [[nodiscard]] auto id() const -> std::string override { return "frozen-random-conv"; }
    [[nodiscard]] auto distance(const torch::Tensor& x, const torch::Tensor& y) const -> torch::Tensor override {
        auto fx = net_.feature_maps(x.permute({0, 3, 1, 2}));
        auto fy = net_.feature_maps(y.permute({0, 3, 1, 2}));
        auto total = torch::zeros({}, x.options());
        for (size_t i = 0; i < fx.size(); ++i) {
            auto nx = fx[i] / (fx[i].pow(2).sum(1, true).add(1e-10).sqrt());
            auto ny = fy[i] / (fy[i].pow(2).sum(1, true).add(1e-10).sqrt());
            total = total + (nx - ny).pow(2).sum(1).mean();
        }
        return total;
    }

private:
    FrozenConvNet net_;
};

class ConvPooled final : public PooledFeatureProvider {
public:
    ConvPooled(bool relu, std::string id) : net_({16, 32, 64}, relu, kPooledSeed), id_(std::move(id)) {}
    [[nodiscard]] auto id() const -> std::string override { return id_; }
    [[nodiscard]] auto pooled(const torch::Tensor& pixels) const -> torch::Tensor override {
        torch::NoGradGuard no_grad;
        return net_.feature_maps(pixels.permute({0, 3, 1, 2})).back().mean({2, 3});
    }

private:
    FrozenConvNet net_;
    std::string id_;
};

}    // namespace

auto make_semantic_provider(const std::string& id, const PipelineConfig& config) -> std::shared_ptr<SemanticProvider> {
    (void)config;
    if (id == "none") {
        return std::make_shared<NoneSemanticProvider>();
    }
    if (id == "frozen-random-conv") {
        return std::make_shared<ConvSemanticProvider>();
    }
    // external:<dir>:<feature_dim>
    static const std::regex external(R"(external:(.+):(\d+))");
    std::smatch match;
    if (std::regex_match(id, match, external)) {
        return std::make_shared<ExternalSemanticProvider>(match[1].str(), std::stoll(match[2].str()));
    }
    throw ConfigError("unknown semantic provider '" + id + "'");
}

auto make_perceptual_provider(const std::string& id) -> std::shared_ptr<PerceptualProvider> {
    if (id == "off") {
        return std::make_shared<OffPerceptual>();
    }
    if (id == "frozen-random-conv") {
        return std::make_shared<ConvPerceptual>();
    }
    throw ConfigError("unknown perceptual provider '" + id + "'");
}

auto make_pooled_provider(const std::string& id) -> std::shared_ptr<PooledFeatureProvider> {
    if (id == "frozen-random-conv") {
        return std::make_shared<ConvPooled>(true, id);
    }
    if (id == "linear") {
        return std::make_shared<ConvPooled>(false, id);
    }
    throw ConfigError("unknown feature provider '" + id + "'");
}

void write_npy(const fs::path& path, const torch::Tensor& array) {
    auto data = array.detach().to(torch::kFloat32).contiguous();
    std::string shape;
    for (auto d : data.sizes()) {
        shape += std::to_string(d) + ", ";
    }
    if (data.dim() > 1) {
        shape.erase(shape.size() - 2);
    } else if (data.dim() == 1) {
        shape.erase(shape.size() - 1);
    }
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + shape + "), }";
    const size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write '" + path.string() + "'");
    }
    out.write("\x93NUMPY\x01\x00", 8);
    const auto len = static_cast<uint16_t>(header.size());
    const char len_bytes[2] = {static_cast<char>(len & 0xFF), static_cast<char>(len >> 8)};
    out.write(len_bytes, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(static_cast<const char*>(data.data_ptr()), static_cast<std::streamsize>(data.numel() * 4));
}

auto read_npy(const fs::path& path) -> torch::Tensor {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot read '" + path.string() + "'");
    }
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) {
        throw InputError("'" + path.string() + "' is not an .npy file");
    }
    uint32_t header_len = 0;
    if (magic[6] == 1) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        header_len = b[0] | (b[1] << 8);
    } else {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }
    std::string header(header_len, '\0');
    in.read(header.data(), header_len);
    if (header.find("'<f4'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos) {
        throw InputError("'" + path.string() + "': only C-order little-endian float32 arrays are supported");
    }
    static const std::regex shape_re(R"('shape':\s*\(([^)]*)\))");
    std::smatch match;
    if (!std::regex_search(header, match, shape_re)) {
        throw InputError("'" + path.string() + "': missing shape");
    }
    std::vector<int64_t> shape;
    static const std::regex dim_re(R"(\d+)");
    auto dims = match[1].str();
    for (auto it = std::sregex_iterator(dims.begin(), dims.end(), dim_re); it != std::sregex_iterator(); ++it) {
        shape.push_back(std::stoll(it->str()));
    }
    auto out = torch::empty(shape, torch::kFloat32);
    in.read(static_cast<char*>(out.data_ptr()), static_cast<std::streamsize>(out.numel() * 4));
    if (!in) {
        throw InputError("'" + path.string() + "': truncated payload");
    }
    return out;
}

}    // namespace hita
