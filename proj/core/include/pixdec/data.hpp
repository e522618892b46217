// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Procedural image corpus with truthful token captions.

#include "pixdec/digest.hpp"
#include "pixdec/rng.hpp"
#include "pixdec/types.hpp"

#include <torch/torch.h>

#include <string>
#include <vector>

namespace pixdec {

enum class GeneratorClass : int64_t { Gradient = 0, Stripes, Checker, Blob, Glyph };
inline constexpr int64_t kNumGeneratorClasses = 5;

/// Fixed caption vocabulary: generator class, foreground color, background
/// color, orientation and scale words.
class Vocabulary {
public:
    static const std::vector<std::string>& words();
    static int64_t size() { return static_cast<int64_t>(words().size()); }
    static int64_t id(const std::string& word);
    static std::string decode(const TextCondition& text);
    /// Whitespace-separated words; throws DomainError for unknown words.
    static TextCondition parse(const std::string& caption);
};

struct Bucket {
    int64_t height = 64;
    int64_t width = 64;

    bool operator==(const Bucket&) const = default;
};

/// Parses "64x64,64x96".
std::vector<Bucket> parse_buckets(const std::string& spec);

struct SyntheticSample {
    ImageGrid image; // [3, H, W] in [-1, 1]
    TextCondition caption;
    int64_t generator_class = 0;
};

using Corpus = std::vector<SyntheticSample>;

/// One image of size `bucket`; every parameter of the draw comes from `rng`.
SyntheticSample render_sample(Rng& rng, const Bucket& bucket);

/// n samples, buckets chosen uniformly, classes uniform. Deterministic in seed.
Corpus generate_corpus(int64_t n, uint64_t seed, const std::vector<Bucket>& buckets);

struct Batch {
    torch::Tensor images; // [B, 3, H, W]
    std::vector<TextCondition> captions;
    torch::Tensor classes; // [B]
};

/// Uniform sampling with replacement, one bucket per batch.
class BatchSampler {
public:
    BatchSampler(const Corpus& corpus, Rng rng);

    Batch next(int64_t batch_size);
    /// Deterministic batch made of the first `n` samples of the first bucket.
    Batch head(int64_t n) const;

private:
    const Corpus* corpus_;
    Rng rng_;
    std::vector<std::vector<size_t>> by_bucket_;
};

Batch make_batch(const Corpus& corpus, const std::vector<size_t>& indices);

/// Archive form: per sample "sample.<i>.image", ".caption", ".class".
NamedTensors corpus_tensors(const Corpus& corpus);
/// Inverse of corpus_tensors; throws CheckpointError on missing entries.
Corpus corpus_from_tensors(const NamedTensors& tensors);

} // namespace pixdec
