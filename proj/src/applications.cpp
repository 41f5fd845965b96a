#include "hita/applications.hpp"

#include <cmath>

#include "hita/errors.hpp"

namespace hita {

auto style_transfer(HolisticTokenizer& tokenizer, const ImageBatch& content, const ImageBatch& reference)
    -> StyleTransferResult {
    const auto& config = tokenizer->config();
    check_batch(content, config);
    check_batch(reference, config);
    if (content.pixels.sizes() != reference.pixels.sizes()) {
        throw ValidationError("content and reference batches differ in shape");
    }
    tokenizer->eval();
    auto content_ids = tokenizer->tokenize(content);
    auto reference_ids = tokenizer->tokenize(reference);
    StyleTransferResult result;
    result.ids = {reference_ids.holistic, content_ids.patch};
    result.images = tokenizer->decode_tokens(result.ids);
    return result;
}

auto visible_patch_rows(double fraction, const PipelineConfig& config) -> int64_t {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ValidationError("visible fraction must lie in (0, 1]");
    }
    const auto visible_pixels = static_cast<int64_t>(std::floor(fraction * static_cast<double>(config.image_size)));
    const int64_t rows = visible_pixels / config.downsample_factor;
    if (rows == 0) {
        throw ValidationError("visible fraction " + std::to_string(fraction) + " leaves no fully visible patch row");
    }
    return rows;
}

auto inpaint(HolisticTokenizer& tokenizer, ARModel& model, const ImageBatch& images, const InpaintOptions& options)
    -> InpaintResult {
    const auto& config = tokenizer->config();
    check_batch(images, config);
    const auto& layout = model->layout();
    if (layout.holistic != config.holistic_count() || layout.grid_size() != config.grid_size() ||
        layout.codebook_size != config.codebook_size) {
        throw ValidationError("AR model layout does not match the tokenizer");
    }
    InpaintResult result;
    result.visible_rows = visible_patch_rows(options.visible_fraction, config);
    const auto visible_pixels =
        static_cast<int64_t>(std::floor(options.visible_fraction * static_cast<double>(config.image_size)));

    auto pixels = images.pixels.clone();
    pixels.slice(1, visible_pixels).zero_();
    result.partial = {pixels, images.labels};

    tokenizer->eval();
    auto ids = tokenizer->tokenize(result.partial);
    const int64_t m = config.holistic_count();
    const int64_t visible_patches = result.visible_rows * config.grid_side();
    const auto batch = images.size();
    for (int64_t b = 0; b < batch; ++b) {
        ForcedTokens forced(static_cast<size_t>(layout.length()));
        if (!options.generate_holistic) {
            for (int64_t i = 0; i < m; ++i) {
                forced[static_cast<size_t>(i)] = ids.holistic[b][i].item<int64_t>();
            }
        }
        for (int64_t i = 0; i < visible_patches; ++i) {
            forced[static_cast<size_t>(m + i)] = ids.patch[b][i].item<int64_t>();
        }
        result.prefix.push_back(std::move(forced));
    }
    result.sequences = complete_batch(model, std::vector<int64_t>(static_cast<size_t>(batch), options.class_id),
                                      result.prefix, options.sampling);

    auto all = torch::empty({batch, layout.length()}, torch::kInt64);
    for (int64_t b = 0; b < batch; ++b) {
        all[b] = torch::tensor(result.sequences[static_cast<size_t>(b)].ids, torch::kInt64);
    }
    result.images = tokenizer->decode_tokens({all.slice(1, 0, m), all.slice(1, m)});
    result.images.labels = images.labels;
    return result;
}

auto consistency_score(const ImageBatch& original, const ImageBatch& completed,
                       const std::shared_ptr<PooledFeatureProvider>& provider) -> double {
    if (!provider) {
        throw ConfigError("consistency_score needs a feature provider");
    }
    if (original.pixels.sizes() != completed.pixels.sizes()) {
        throw ShapeError("consistency_score: batches differ in shape");
    }
    auto a = provider->pooled(original.pixels).to(torch::kFloat64);
    auto b = provider->pooled(completed.pixels).to(torch::kFloat64);
    auto dot = (a * b).sum(1);
    auto denom = a.norm(2, 1) * b.norm(2, 1);
    auto cosine = dot / denom.clamp_min(1e-12);
    return cosine.clamp(-1.0, 1.0).mean().item<double>();
}

auto linear_probe(const torch::Tensor& train_features, const torch::Tensor& train_labels,
                  const torch::Tensor& test_features, const torch::Tensor& test_labels, double l2) -> ProbeResult {
    if (train_features.dim() != 2 || test_features.dim() != 2 || train_features.size(1) != test_features.size(1)) {
        throw ShapeError("probe features must be N x F with matching F");
    }
    auto labels = train_labels.to(torch::kInt64);
    const auto classes = std::get<0>(at::_unique(labels)).numel();
    if (classes < 2) {
        throw ValidationError("linear probe needs at least 2 classes");
    }
    const int64_t num_classes = labels.max().item<int64_t>() + 1;

    torch::NoGradGuard outer;
    auto x = train_features.to(torch::kFloat64);
    auto mean = x.mean(0, true);
    auto stddev = x.std(0, true, true).clamp_min(1e-8);
    x = (x - mean) / stddev;
    auto xt = (test_features.to(torch::kFloat64) - mean) / stddev;

    auto weight = torch::zeros({x.size(1), num_classes}, torch::dtype(torch::kFloat64).requires_grad(true));
    auto bias = torch::zeros({num_classes}, torch::dtype(torch::kFloat64).requires_grad(true));
    torch::optim::LBFGS optimizer({weight, bias}, torch::optim::LBFGSOptions(1.0)
                                                      .max_iter(500)
                                                      .tolerance_grad(1e-9)
                                                      .tolerance_change(1e-12)
                                                      .line_search_fn("strong_wolfe"));
    auto closure = [&] {
        torch::AutoGradMode enable(true);
        optimizer.zero_grad();
        auto loss = torch::nn::functional::cross_entropy(torch::addmm(bias, x, weight), labels) +
                    0.5 * l2 * weight.pow(2).sum();
        loss.backward();
        return loss;
    };
    {
        torch::AutoGradMode enable(true);
        optimizer.step(closure);
    }
    auto accuracy = [&](const torch::Tensor& features, const torch::Tensor& target) {
        auto pred = torch::addmm(bias, features, weight).argmax(1);
        return pred.eq(target.to(torch::kInt64)).to(torch::kFloat64).mean().item<double>();
    };
    return {accuracy(x, labels), accuracy(xt, test_labels)};
}

auto corpus_features(HolisticTokenizer& tokenizer, const Corpus& corpus, int64_t batch_size) -> torch::Tensor {
    tokenizer->eval();
    std::vector<torch::Tensor> parts;
    for (int64_t begin = 0; begin < corpus.size(); begin += batch_size) {
        parts.push_back(tokenizer->probe_features(corpus.batch(begin, begin + batch_size)));
    }
    return torch::cat(parts, 0);
}

auto tokenizer_probe(HolisticTokenizer& tokenizer, const Corpus& train, const Corpus& test) -> ProbeResult {
    return linear_probe(corpus_features(tokenizer, train), train.labels, corpus_features(tokenizer, test),
                        test.labels);
}

auto parameter_checksum(const torch::nn::Module& module) -> double {
    torch::NoGradGuard no_grad;
    double sum = 0.0;
    for (const auto& p : module.parameters()) {
        sum += p.to(torch::kFloat64).sum().item<double>();
    }
    for (const auto& b : module.buffers()) {
        sum += b.to(torch::kFloat64).sum().item<double>();
    }
    return sum;
}

}    // namespace hita
