#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "hita/config.hpp"

namespace hita {

// B x H x W x 3 pixels in [-1, 1]; labels are B class indices when present.
struct ImageBatch {
    torch::Tensor pixels;
    std::optional<torch::Tensor> labels;

    [[nodiscard]] auto size() const -> int64_t { return pixels.size(0); }
    // NCHW view for convolution stacks.
    [[nodiscard]] auto nchw() const -> torch::Tensor { return pixels.permute({0, 3, 1, 2}); }
    static auto from_nchw(const torch::Tensor& nchw) -> ImageBatch;
};

// Throws ShapeError / ValidationError when the batch does not match the config geometry.
void check_batch(const ImageBatch& batch, const PipelineConfig& config);

// Whole corpus held in memory; desk-scale corpora are small.
struct Corpus {
    torch::Tensor images;    // N x H x W x 3, float32
    torch::Tensor labels;    // N, int64
    int64_t num_classes = 0;
    int64_t warnings = 0;    // unreadable files skipped during ingestion
    std::vector<std::string> class_names;

    [[nodiscard]] auto size() const -> int64_t { return images.size(0); }
    [[nodiscard]] auto slice(int64_t begin, int64_t end) const -> Corpus;
    [[nodiscard]] auto batch(int64_t begin, int64_t end) const -> ImageBatch;
};

// Procedural class-structured images: each class is a shape family drawn with
// random colours, position and size on a random background.
auto make_synthetic_corpus(const PipelineConfig& config, int64_t count, uint64_t seed) -> Corpus;

// Images grouped by class subdirectory (sorted names -> label ids). Unreadable
// files are skipped and counted in Corpus::warnings.
auto load_directory_corpus(const std::filesystem::path& root, const PipelineConfig& config) -> Corpus;

// Directory from --data / HITA_DATA, synthetic corpus when neither is set.
auto ingest_dataset(const std::optional<std::filesystem::path>& root, const PipelineConfig& config) -> Corpus;

// Shuffled batches over a corpus, reshuffled every epoch from a seeded generator.
class BatchLoader {
public:
    BatchLoader(const Corpus& corpus, int64_t batch_size, uint64_t seed, bool shuffle = true);

    // Next batch; wraps into a fresh epoch when the current one is exhausted.
    auto next() -> ImageBatch;
    // One full pass in the current epoch order (last batch may be short).
    auto epoch() -> std::vector<ImageBatch>;
    [[nodiscard]] auto batches_per_epoch() const -> int64_t;

private:
    void reshuffle();

    const Corpus* corpus_;
    int64_t batch_size_;
    bool shuffle_;
    torch::Generator generator_;
    torch::Tensor order_;
    int64_t cursor_ = 0;
};

// 8-bit PNG I/O; pixels are H x W x 3 in [-1, 1].
auto read_image(const std::filesystem::path& path, int64_t image_size) -> torch::Tensor;
void write_png(const std::filesystem::path& path, const torch::Tensor& hwc);
// Horizontal concatenation of equally sized H x W x 3 panels.
void write_panel(const std::filesystem::path& path, const std::vector<torch::Tensor>& panels);

}    // namespace hita
