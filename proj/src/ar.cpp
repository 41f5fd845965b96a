#include "hita/ar.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "hita/errors.hpp"
#include "hita/training.hpp"

namespace hita {

auto ARLayout::from(const PipelineConfig& config) -> ARLayout {
    return ARLayout{config.holistic_count(), config.grid_side(), config.codebook_size, config.num_classes};
}

ARModelImpl::ARModelImpl(const PipelineConfig& config) : layout_(ARLayout::from(config)) {
    const int64_t width = config.ar_width;
    const int64_t vocab = 2 * layout_.codebook_size + layout_.num_classes + 1;
    tokens = register_module("tokens", torch::nn::Embedding(vocab, width));
    torch::nn::init::normal_(tokens->weight, 0.0, 0.02);
    if (layout_.holistic > 0) {
        holistic_pos = register_parameter("holistic_pos", torch::randn({layout_.holistic, width}) * 0.02);
    }
    blocks = register_module(
        "blocks", TransformerStack(config.ar_layers, width, config.ar_heads, AttentionMask::causal, config.ar_dropout));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    head = register_module("head", torch::nn::Linear(width, 2 * layout_.codebook_size));
    torch::nn::init::normal_(head->weight, 0.0, 0.02);
    torch::nn::init::zeros_(head->bias);
}

auto ARModelImpl::rotary_positions(int64_t input_length) const -> RotaryPositions {
    auto rows = torch::zeros({input_length}, torch::kFloat32);
    auto cols = torch::zeros({input_length}, torch::kFloat32);
    auto r = rows.accessor<float, 1>();
    auto c = cols.accessor<float, 1>();
    for (int64_t i = 1; i < input_length; ++i) {
        const int64_t token = i - 1;
        if (token >= layout_.holistic) {
            const int64_t p = token - layout_.holistic;
            r[i] = static_cast<float>(p / layout_.grid_side);
            c[i] = static_cast<float>(p % layout_.grid_side);
        }
    }
    return {rows, cols};
}

auto ARModelImpl::embed(const torch::Tensor& ids, const torch::Tensor& classes) -> torch::Tensor {
    const int64_t batch = ids.size(0);
    const int64_t t = ids.size(1);
    if (t > layout_.length()) {
        throw ValidationError("token prefix longer than the sequence layout");
    }
    if (classes.size(0) != batch) {
        throw ShapeError("class ids must match the batch size");
    }
    if (classes.numel() > 0 &&
        (classes.min().item<int64_t>() < 0 || classes.max().item<int64_t>() > layout_.null_class())) {
        throw ValidationError("class id outside [0, " + std::to_string(layout_.num_classes) + "]");
    }
    auto offsets = torch::zeros({t}, torch::kInt64);
    for (int64_t i = 0; i < t; ++i) {
        offsets[i] = layout_.offset(i);
    }
    if (ids.numel() > 0 && (ids.min().item<int64_t>() < 0 || ids.max().item<int64_t>() >= layout_.codebook_size)) {
        throw ValidationError("token id outside [0, " + std::to_string(layout_.codebook_size) + ")");
    }
    auto vocab_ids = torch::cat({(classes + 2 * layout_.codebook_size).unsqueeze(1), ids + offsets}, 1);
    auto h = tokens->forward(vocab_ids);
    const int64_t holistic_inputs = std::min(t, layout_.holistic);
    if (holistic_inputs > 0) {
        auto pos = torch::cat({torch::zeros({1, h.size(2)}, h.options()), holistic_pos.slice(0, 0, holistic_inputs),
                          torch::zeros({t - holistic_inputs, h.size(2)}, h.options())},
                         0);
        h = h + pos;
    }
    return h;
}

auto ARModelImpl::forward_embedded(const torch::Tensor& hidden) -> torch::Tensor {
    const int64_t length = hidden.size(1);
    auto rotary = rotary_positions(length);
    rotary.rows = rotary.rows.to(hidden.dtype());
    rotary.cols = rotary.cols.to(hidden.dtype());
    auto h = norm->forward(blocks->forward(hidden, &rotary));
    auto logits = head->forward(h);
    // output position i predicts token i; mask the other book's segment
    const int64_t n = layout_.codebook_size;
    auto wrong = torch::zeros({length, 2 * n}, torch::kBool);
    for (int64_t i = 0; i < length; ++i) {
        if (layout_.kind(i) == TokenKind::holistic) {
            wrong[i].slice(0, n, 2 * n).fill_(true);
        } else {
            wrong[i].slice(0, 0, n).fill_(true);
        }
    }
    return logits.masked_fill(wrong, kMaskedLogit);
}

auto ARModelImpl::forward_logits(const torch::Tensor& ids, const torch::Tensor& classes) -> torch::Tensor {
    return forward_embedded(embed(ids, classes));
}

auto ar_loss(ARModel& model, const torch::Tensor& ids, const torch::Tensor& classes, double class_dropout_prob,
             std::optional<torch::Generator> generator) -> torch::Tensor {
    const auto& layout = model->layout();
    const int64_t length = layout.length();
    if (ids.dim() != 2 || ids.size(1) != length) {
        throw ShapeError("AR training sequences must be B x " + std::to_string(length));
    }
    auto cls = classes;
    if (class_dropout_prob > 0.0) {
        auto draw = generator ? torch::rand({ids.size(0)}, *generator) : torch::rand({ids.size(0)});
        cls = torch::where(draw < class_dropout_prob, torch::full_like(classes, layout.null_class()), classes);
    }
    auto logits = model->forward_logits(ids.slice(1, 0, length - 1), cls);
    auto offsets = torch::zeros({length}, torch::kInt64);
    for (int64_t i = 0; i < length; ++i) {
        offsets[i] = layout.offset(i);
    }
    auto targets = ids + offsets;
    return torch::nn::functional::cross_entropy(logits.reshape({-1, logits.size(2)}), targets.reshape({-1}));
}

auto guided_logits(const torch::Tensor& cond, const torch::Tensor& uncond, double scale) -> torch::Tensor {
    return cond + (scale - 1.0) * (cond - uncond);
}

auto complete_batch(ARModel& model, const std::vector<int64_t>& class_ids, const std::vector<ForcedTokens>& forced,
                    const SamplingOptions& options) -> std::vector<TokenSequence> {
    torch::NoGradGuard no_grad;
    const auto& layout = model->layout();
    const auto rows = static_cast<int64_t>(class_ids.size());
    const int64_t length = layout.length();
    const int64_t n = layout.codebook_size;
    if (forced.size() != class_ids.size()) {
        throw ShapeError("one forced-token list per row is required");
    }
    if (options.cfg_scale < 1.0) {
        throw ValidationError("cfg_scale must be >= 1");
    }
    for (auto c : class_ids) {
        if (c < 0 || c >= layout.num_classes) {
            throw ValidationError("invalid class id " + std::to_string(c));
        }
    }
    for (const auto& f : forced) {
        if (static_cast<int64_t>(f.size()) != length) {
            throw ShapeError("forced-token list must have one entry per position");
        }
        for (const auto& v : f) {
            if (v && (*v < 0 || *v >= n)) {
                throw ValidationError("forced token id outside [0, N)");
            }
        }
    }
    model->eval();
    auto generator = at::make_generator<at::CPUGeneratorImpl>(options.seed);
    auto ids = torch::zeros({rows, length}, torch::kInt64);
    auto cond_classes = torch::tensor(class_ids, torch::kInt64);
    auto null_classes = torch::full({rows}, layout.null_class(), torch::kInt64);
    const bool guided = options.cfg_scale != 1.0;

    for (int64_t pos = 0; pos < length; ++pos) {
        std::vector<int64_t> sample_rows;
        for (int64_t r = 0; r < rows; ++r) {
            if (forced[static_cast<size_t>(r)][static_cast<size_t>(pos)]) {
                ids[r][pos] = *forced[static_cast<size_t>(r)][static_cast<size_t>(pos)];
            } else {
                sample_rows.push_back(r);
            }
        }
        if (sample_rows.empty()) {
            continue;
        }
        auto sel = torch::tensor(sample_rows, torch::kInt64);
        auto prefix = ids.index_select(0, sel).slice(1, 0, pos);
        auto cls = cond_classes.index_select(0, sel);
        torch::Tensor logits;
        if (guided) {
            auto both = model->forward_logits(torch::cat({prefix, prefix}, 0),
                                              torch::cat({cls, null_classes.index_select(0, sel)}, 0));
            auto last = both.select(1, pos);
            auto k = static_cast<int64_t>(sample_rows.size());
            logits = guided_logits(last.slice(0, 0, k), last.slice(0, k, 2 * k), options.cfg_scale);
        } else {
            logits = model->forward_logits(prefix, cls).select(1, pos);
        }
        const int64_t offset = layout.offset(pos);
        auto segment = logits.slice(1, offset, offset + n);
        torch::Tensor picked;
        if (options.temperature == 0.0) {
            picked = segment.argmax(1);
        } else {
            auto scaled = segment / options.temperature;
            if (options.top_k > 0 && options.top_k < n) {
                auto kth = std::get<0>(scaled.topk(options.top_k, 1)).select(1, options.top_k - 1).unsqueeze(1);
                scaled = scaled.masked_fill(scaled < kth, -std::numeric_limits<float>::infinity());
            }
            picked = torch::multinomial(torch::softmax(scaled, 1), 1, false, generator).squeeze(1);
        }
        ids.index_put_({sel, pos}, picked);
    }

    std::vector<TokenSequence> out;
    out.reserve(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        out.push_back(to_sequence(ids[r], class_ids[static_cast<size_t>(r)], layout));
    }
    return out;
}

auto complete(ARModel& model, int64_t class_id, const ForcedTokens& forced, const SamplingOptions& options)
    -> TokenSequence {
    return complete_batch(model, {class_id}, {forced}, options).front();
}

auto generate(ARModel& model, int64_t class_id, const SamplingOptions& options) -> TokenSequence {
    return complete(model, class_id, ForcedTokens(static_cast<size_t>(model->layout().length())), options);
}

auto to_sequence(const torch::Tensor& row, int64_t class_id, const ARLayout& layout) -> TokenSequence {
    TokenSequence seq;
    seq.class_id = class_id;
    auto values = row.to(torch::kInt64).contiguous();
    auto acc = values.accessor<int64_t, 1>();
    for (int64_t i = 0; i < values.size(0); ++i) {
        seq.ids.push_back(acc[i]);
        seq.kinds.push_back(layout.kind(i));
    }
    return seq;
}

auto train_ar(const PipelineConfig& config, const TokenDataset& data, const ARTrainOptions& options) -> ARRun {
    if (data.size() == 0) {
        throw DataError("AR training needs at least one token sequence");
    }
    torch::manual_seed(config.seed + 17);
    ARRun run;
    run.model = ARModel(config);
    run.model->train();
    torch::optim::Adam optimizer(run.model->parameters(), torch::optim::AdamOptions(config.ar_learning_rate));
    auto generator = at::make_generator<at::CPUGeneratorImpl>(config.seed + 29);
    const int64_t batch = std::min(config.ar_batch_size, data.size());
    for (int64_t step = 0; step < options.steps; ++step) {
        auto idx = torch::randint(data.size(), {batch}, generator, torch::kInt64);
        auto loss = ar_loss(run.model, data.ids.index_select(0, idx), data.labels.index_select(0, idx),
                            config.class_dropout_prob, generator);
        optimizer.zero_grad();
        loss.backward();
        torch::nn::utils::clip_grad_norm_(run.model->parameters(), config.grad_clip);
        const double lr = cosine_learning_rate(config.ar_learning_rate, step, options.steps);
        for (auto& group : optimizer.param_groups()) {
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        }
        optimizer.step();
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
            throw TrainingError("non-finite AR loss at step " + std::to_string(step));
        }
        run.losses.push_back(value);
        if (options.on_report) {
            options.on_report(step, value);
        }
    }
    run.model->eval();
    return run;
}

auto mean_cross_entropy(ARModel& model, const TokenDataset& data, int64_t batch_size) -> double {
    torch::NoGradGuard no_grad;
    model->eval();
    double sum = 0.0;
    for (int64_t begin = 0; begin < data.size(); begin += batch_size) {
        const int64_t end = std::min(begin + batch_size, data.size());
        auto loss = ar_loss(model, data.ids.slice(0, begin, end), data.labels.slice(0, begin, end));
        sum += loss.item<double>() * static_cast<double>(end - begin);
    }
    return sum / static_cast<double>(data.size());
}

}    // namespace hita
