// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/data.hpp"

#include "pixdec/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

namespace pixdec {

namespace {

// Word ids are positions in this list.
const std::vector<std::string> kWords = {
    "gradient", "stripes", "checker", "blob",  "glyph",                            // 0-4 classes
    "red",      "green",   "blue",    "yellow", "cyan", "magenta", "white", "black", // 5-12 colors
    "horizontal", "vertical", "diagonal",                                          // 13-15
    "small",    "medium",  "large",                                                // 16-18
};
constexpr int64_t kColorBase = 5;
constexpr int64_t kNumColors = 8;
constexpr int64_t kOrientBase = 13;
constexpr int64_t kScaleBase = 16;

constexpr std::array<std::array<double, 3>, kNumColors> kPalette = {{
    {0.90, 0.15, 0.10},
    {0.15, 0.75, 0.20},
    {0.15, 0.30, 0.90},
    {0.95, 0.85, 0.15},
    {0.10, 0.80, 0.85},
    {0.85, 0.20, 0.75},
    {0.95, 0.95, 0.95},
    {0.05, 0.05, 0.05},
}};

double soft_step(double x, double sharpness)
{
    return 0.5 + 0.5 * std::tanh(sharpness * x);
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by)
{
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double h = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    h = std::clamp(h, 0.0, 1.0);
    const double dx = px - ax - h * vx, dy = py - ay - h * vy;
    return std::sqrt(dx * dx + dy * dy);
}

struct Segment {
    double ax, ay, bx, by;
};

struct Blob {
    double cx, cy;
};

} // namespace

const std::vector<std::string>& Vocabulary::words()
{
    return kWords;
}

int64_t Vocabulary::id(const std::string& word)
{
    auto it = std::find(kWords.begin(), kWords.end(), word);
    if (it == kWords.end())
        throw DomainError("unknown caption word '" + word + "'");
    return static_cast<int64_t>(it - kWords.begin());
}

std::string Vocabulary::decode(const TextCondition& text)
{
    std::string out;
    for (auto id : text.token_ids) {
        if (!out.empty())
            out += ' ';
        out += (id >= 0 && id < size()) ? kWords[id] : "<unk>";
    }
    return out;
}

TextCondition Vocabulary::parse(const std::string& caption)
{
    TextCondition t;
    std::istringstream is(caption);
    std::string w;
    while (is >> w)
        t.token_ids.push_back(id(w));
    return t;
}

std::vector<Bucket> parse_buckets(const std::string& spec)
{
    std::vector<Bucket> out;
    std::istringstream is(spec);
    std::string item;
    while (std::getline(is, item, ',')) {
        const auto x = item.find('x');
        if (x == std::string::npos)
            throw ConfigError("bucket '" + item + "' is not HxW");
        try {
            out.push_back({std::stoll(item.substr(0, x)), std::stoll(item.substr(x + 1))});
        } catch (const std::exception&) {
            throw ConfigError("bucket '" + item + "' is not HxW");
        }
        if (out.back().height < 1 || out.back().width < 1)
            throw ConfigError("bucket '" + item + "' must have positive sides");
    }
    if (out.empty())
        throw ConfigError("bucket list is empty");
    return out;
}

SyntheticSample render_sample(Rng& rng, const Bucket& bucket)
{
    const auto cls = static_cast<GeneratorClass>(rng.randint_scalar(kNumGeneratorClasses));
    const int64_t fg = rng.randint_scalar(kNumColors);
    const int64_t bg = (fg + 1 + rng.randint_scalar(kNumColors - 1)) % kNumColors;
    const int64_t orient = rng.randint_scalar(3);
    const int64_t scale = rng.randint_scalar(3);

    // Scale word -> feature size relative to the shorter side.
    const std::array<double, 3> period = {0.125, 0.25, 0.5};
    const std::array<double, 3> steep = {8.0, 4.0, 2.0};
    const std::array<double, 3> radius = {0.07, 0.13, 0.24};
    const std::array<double, 3> thickness = {0.025, 0.045, 0.08};

    const double phase = rng.uniform_scalar(0.0, 2.0 * std::numbers::pi);
    const double phase2 = rng.uniform_scalar(0.0, 2.0 * std::numbers::pi);
    const double center = rng.uniform_scalar(0.3, 0.7);

    std::vector<Blob> blobs;
    std::vector<Segment> strokes;
    if (cls == GeneratorClass::Blob) {
        const int64_t n = 1 + rng.randint_scalar(3);
        for (int64_t i = 0; i < n; ++i)
            blobs.push_back({rng.uniform_scalar(0.15, 0.85), rng.uniform_scalar(0.15, 0.85)});
    } else if (cls == GeneratorClass::Glyph) {
        const int64_t n = 2 + rng.randint_scalar(3);
        for (int64_t i = 0; i < n; ++i) {
            const double ax = rng.uniform_scalar(0.15, 0.85), ay = rng.uniform_scalar(0.15, 0.85);
            const double len = rng.uniform_scalar(0.25, 0.6);
            // Orientation biases stroke direction.
            double angle = orient == 0 ? 0.0 : orient == 1 ? std::numbers::pi / 2 : std::numbers::pi / 4;
            angle += rng.uniform_scalar(-0.35, 0.35) + (i % 2 == 1 ? std::numbers::pi / 2 : 0.0);
            strokes.push_back({ax, ay, ax + len * std::cos(angle), ay + len * std::sin(angle)});
        }
    }

    const auto H = bucket.height, W = bucket.width;
    const double S = static_cast<double>(std::min(H, W));
    auto img = torch::empty({3, H, W}, torch::kFloat);
    auto acc = img.accessor<float, 3>();
    const auto& cf = kPalette[fg];
    const auto& cb = kPalette[bg];
    const double two_pi = 2.0 * std::numbers::pi;

    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            const double u = (x + 0.5) / S, v = (y + 0.5) / S;
            const double proj = orient == 0 ? u : orient == 1 ? v : (u + v) / std::numbers::sqrt2;
            double m = 0.0;
            switch (cls) {
            case GeneratorClass::Gradient:
                m = soft_step(proj - center, steep[scale]);
                break;
            case GeneratorClass::Stripes:
                m = soft_step(std::sin(two_pi * proj / period[scale] + phase), 4.0);
                break;
            case GeneratorClass::Checker: {
                double a = u, b = v;
                if (orient == 2) {
                    a = (u + v) / std::numbers::sqrt2;
                    b = (u - v) / std::numbers::sqrt2;
                }
                const double sa = std::sin(two_pi * a / period[scale] + phase);
                const double sb = std::sin(two_pi * b / period[scale] + phase2);
                m = soft_step(sa * sb, 6.0);
                break;
            }
            case GeneratorClass::Blob:
                for (const auto& bl : blobs) {
                    const double d2 = (u - bl.cx) * (u - bl.cx) + (v - bl.cy) * (v - bl.cy);
                    m = std::max(m, std::exp(-d2 / (2.0 * radius[scale] * radius[scale])));
                }
                break;
            case GeneratorClass::Glyph:
                for (const auto& s : strokes) {
                    const double d = segment_distance(u, v, s.ax, s.ay, s.bx, s.by);
                    m = std::max(m, soft_step(thickness[scale] - d, 1.0 / thickness[scale] * 1.5));
                }
                break;
            }
            for (int c = 0; c < 3; ++c)
                acc[c][y][x] = static_cast<float>(2.0 * (cb[c] + m * (cf[c] - cb[c])) - 1.0);
        }
    }

    SyntheticSample s;
    s.image = img;
    s.generator_class = static_cast<int64_t>(cls);
    s.caption.token_ids.push_back(static_cast<int64_t>(cls));
    s.caption.token_ids.push_back(kColorBase + fg);
    s.caption.token_ids.push_back(kColorBase + bg);
    if (cls != GeneratorClass::Blob)
        s.caption.token_ids.push_back(kOrientBase + orient);
    s.caption.token_ids.push_back(kScaleBase + scale);
    return s;
}

Corpus generate_corpus(int64_t n, uint64_t seed, const std::vector<Bucket>& buckets)
{
    if (buckets.empty())
        throw ConfigError("generate_corpus: empty bucket list");
    if (n < 1)
        throw DomainError("generate_corpus: n must be >= 1");
    Rng rng(mix_seed(seed, "corpus"));
    Corpus corpus;
    corpus.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const auto& b = buckets[static_cast<size_t>(rng.randint_scalar(static_cast<int64_t>(buckets.size())))];
        corpus.push_back(render_sample(rng, b));
    }
    return corpus;
}

Batch make_batch(const Corpus& corpus, const std::vector<size_t>& indices)
{
    Batch b;
    std::vector<torch::Tensor> imgs;
    std::vector<int64_t> classes;
    for (auto i : indices) {
        imgs.push_back(corpus.at(i).image);
        b.captions.push_back(corpus[i].caption);
        classes.push_back(corpus[i].generator_class);
    }
    b.images = torch::stack(imgs);
    b.classes = torch::tensor(classes, torch::kLong);
    return b;
}

BatchSampler::BatchSampler(const Corpus& corpus, Rng rng) : corpus_(&corpus), rng_(std::move(rng))
{
    if (corpus.empty())
        throw ConfigError("BatchSampler: empty corpus");
    std::map<std::pair<int64_t, int64_t>, size_t> slot;
    for (size_t i = 0; i < corpus.size(); ++i) {
        const auto key = std::make_pair(corpus[i].image.size(1), corpus[i].image.size(2));
        auto [it, inserted] = slot.emplace(key, by_bucket_.size());
        if (inserted)
            by_bucket_.emplace_back();
        by_bucket_[it->second].push_back(i);
    }
}

Batch BatchSampler::next(int64_t batch_size)
{
    // Bucket chosen in proportion to its share of the corpus.
    const auto pick = static_cast<size_t>(rng_.randint_scalar(static_cast<int64_t>(corpus_->size())));
    size_t bucket = 0;
    for (size_t acc = 0; bucket < by_bucket_.size(); ++bucket) {
        acc += by_bucket_[bucket].size();
        if (pick < acc)
            break;
    }
    const auto& members = by_bucket_[bucket];
    auto idx = rng_.randint(static_cast<int64_t>(members.size()), {batch_size});
    std::vector<size_t> chosen;
    for (int64_t i = 0; i < batch_size; ++i)
        chosen.push_back(members[static_cast<size_t>(idx[i].item<int64_t>())]);
    return make_batch(*corpus_, chosen);
}

NamedTensors corpus_tensors(const Corpus& corpus)
{
    NamedTensors out;
    for (size_t i = 0; i < corpus.size(); ++i) {
        const std::string p = "sample." + std::to_string(i) + ".";
        out.emplace_back(p + "image", corpus[i].image);
        out.emplace_back(p + "caption", torch::tensor(corpus[i].caption.token_ids, torch::kLong));
        out.emplace_back(p + "class", torch::tensor({corpus[i].generator_class}, torch::kLong));
    }
    return out;
}

Corpus corpus_from_tensors(const NamedTensors& tensors)
{
    std::map<std::string, torch::Tensor> by_name(tensors.begin(), tensors.end());
    Corpus corpus;
    for (size_t i = 0;; ++i) {
        const std::string p = "sample." + std::to_string(i) + ".";
        auto img = by_name.find(p + "image");
        if (img == by_name.end())
            break;
        auto cap = by_name.find(p + "caption");
        auto cls = by_name.find(p + "class");
        if (cap == by_name.end() || cls == by_name.end())
            throw CheckpointError("corpus archive: incomplete entry " + std::to_string(i));
        SyntheticSample s;
        s.image = img->second.to(torch::kFloat);
        auto ids = cap->second.to(torch::kLong).contiguous();
        s.caption.token_ids.assign(ids.data_ptr<int64_t>(), ids.data_ptr<int64_t>() + ids.numel());
        s.generator_class = cls->second.item<int64_t>();
        corpus.push_back(std::move(s));
    }
    if (corpus.empty())
        throw CheckpointError("corpus archive holds no samples");
    return corpus;
}

Batch BatchSampler::head(int64_t n) const
{
    const auto& members = by_bucket_.front();
    std::vector<size_t> chosen;
    for (int64_t i = 0; i < n; ++i)
        chosen.push_back(members[static_cast<size_t>(i) % members.size()]);
    return make_batch(*corpus_, chosen);
}

} // namespace pixdec
