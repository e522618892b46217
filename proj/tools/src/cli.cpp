// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec_cli/cli.hpp"
#include "pixdec_cli/run_config.hpp"

#include "pixdec/base_ldm.hpp"
#include "pixdec/checkpoint.hpp"
#include "pixdec/codecs.hpp"
#include "pixdec/data.hpp"
#include "pixdec/decoder.hpp"
#include "pixdec/digest.hpp"
#include "pixdec/distill.hpp"
#include "pixdec/errors.hpp"
#include "pixdec/flow_model.hpp"
#include "pixdec/flowmath.hpp"
#include "pixdec/image_io.hpp"
#include "pixdec/pipeline.hpp"
#include "pixdec/train.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

namespace pixdec::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class MissingInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Keys naming files the stage writes; every other path key is an input.
bool is_output_key(const std::string& key)
{
    return key == "out" || key == "log";
}

std::string file_sha256(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingInputError("cannot read " + path.string());
    Sha256 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto n = static_cast<size_t>(in.gcount());
        h.update(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(buf.data()), n));
    }
    return h.hex_digest();
}

std::string artifact_digest(const fs::path& path)
{
    if (path.extension() == ".ckpt")
        return peek_checkpoint_digest(path);
    return file_sha256(path);
}

json encoder_json(const EncoderSpec& s)
{
    return {{"kind", to_string(s.kind)},
            {"downsample_factor", s.downsample_factor},
            {"latent_channels", s.latent_channels},
            {"id_hash", s.id_hash},
            {"latent_scale", s.latent_scale}};
}

EncoderSpec encoder_from_json(const json& j)
{
    EncoderSpec s;
    s.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
    s.downsample_factor = j.at("downsample_factor").get<int64_t>();
    s.latent_channels = j.at("latent_channels").get<int64_t>();
    s.id_hash = j.at("id_hash").get<std::string>();
    s.latent_scale = j.at("latent_scale").get<double>();
    return s;
}

NamedTensors with_prefix(const NamedTensors& tensors, const std::string& prefix)
{
    NamedTensors out;
    out.reserve(tensors.size());
    for (const auto& [n, t] : tensors)
        out.emplace_back(prefix + "." + n, t);
    return out;
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, sep)) {
        const auto b = item.find_first_not_of(' ');
        const auto e = item.find_last_not_of(' ');
        if (b != std::string::npos)
            out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

fs::path ema_path(const fs::path& out)
{
    auto p = out;
    return p.replace_extension(".ema.ckpt");
}

fs::path sibling(const fs::path& out, const std::string& ext)
{
    auto p = out;
    return p.replace_extension(ext);
}

// Everything a stage needs: resolved config, input digests, produced files.
struct Context {
    RunConfig config;
    std::ostream& out;
    std::map<std::string, std::string> inputs;  // key -> digest
    std::map<std::string, std::string> outputs; // path -> digest
    fs::path manifest;

    fs::path path(const std::string& key) const { return config.get_path(key); }

    void produced(const fs::path& p) { outputs[p.string()] = artifact_digest(p); }

    Checkpoint load(const std::string& key, std::initializer_list<std::string> kinds)
    {
        auto ckpt = load_checkpoint(path(key));
        if (std::find(kinds.begin(), kinds.end(), ckpt.meta.kind) == kinds.end()) {
            std::string expected;
            for (const auto& k : kinds)
                expected += (expected.empty() ? "" : " or ") + k;
            config.fail(key, "checkpoint kind is '" + ckpt.meta.kind + "', expected " + expected);
        }
        return ckpt;
    }
};

void write_loss_outputs(Context& ctx, const fs::path& out, const LossLog& log)
{
    const auto csv = sibling(out, ".loss.csv");
    log.write_csv(csv);
    ctx.produced(csv);
    if (log.records.empty())
        return;
    PlotSeries s;
    for (const auto& r : log.records) {
        s.x.push_back(static_cast<double>(r.step));
        s.y.push_back(r.loss);
    }
    const auto png = sibling(out, ".loss.png");
    write_line_plot(png, {s});
    ctx.produced(png);
}

StepCallback progress(std::ostream& out, int64_t total)
{
    const int64_t every = std::max<int64_t>(1, total / 20);
    return [&out, every, total](const LossRecord& r) {
        if ((r.step + 1) % every == 0 || r.step + 1 == total)
            out << "step " << r.step + 1 << "/" << total << " loss " << r.loss << "\n";
    };
}

TrainConfig train_config(const RunConfig& rc)
{
    TrainConfig c;
    c.batch_size = rc.get_int("batch_size");
    c.lr = rc.get_real("lr");
    c.steps = rc.get_int("steps");
    c.seed = static_cast<uint64_t>(rc.get_int("seed"));
    if (rc.has("time_shift"))
        c.time_shift = rc.get_real("time_shift");
    if (rc.has("sigma_max"))
        c.sigma_max = rc.get_real("sigma_max");
    if (rc.has("caption_dropout"))
        c.caption_dropout = rc.get_real("caption_dropout");
    if (rc.has("latent_dropout"))
        c.latent_dropout = rc.get_real("latent_dropout");
    if (rc.has("ema_decay"))
        c.ema_decay = rc.get_real("ema_decay");
    if (rc.has("freeze_backbone"))
        c.freeze_backbone = rc.get_bool("freeze_backbone");
    if (rc.has("scale"))
        c.scale = rc.get_int("scale");
    c.validate();
    return c;
}

int64_t checked_scale(const RunConfig& rc)
{
    const auto s = rc.get_int("scale");
    if (s != 1 && s != 2 && s != 4 && s != 8)
        rc.fail("scale", "must be 1, 2, 4 or 8");
    return s;
}

BackboneConfig preset(const RunConfig& rc)
{
    const auto name = rc.get_text("preset");
    if (name == "desk")
        return BackboneConfig::desk();
    if (name == "desk_fast")
        return BackboneConfig::desk_fast();
    if (name == "full")
        return BackboneConfig::full();
    rc.fail("preset", "expected desk, desk_fast or full");
}

Corpus load_corpus(Context& ctx)
{
    return corpus_from_tensors(ctx.load("corpus", {"corpus"}).tensors);
}

Vae load_vae(Context& ctx)
{
    auto ckpt = ctx.load("vae", {"vae"});
    Vae vae(ckpt.meta.config.get<VaeConfig>());
    load_module_tensors(*vae, ckpt.tensors);
    vae->eval();
    return vae;
}

Backbone load_prior(Context& ctx, const std::string& key)
{
    auto ckpt = ctx.load(key, {"prior"});
    Backbone prior(ckpt.meta.config.get<BackboneConfig>());
    load_module_tensors(*prior, ckpt.tensors, "backbone");
    return prior;
}

struct LoadedDecoder {
    PixelDecoder model{nullptr};
    std::optional<flow::SigmaSchedule> schedule; // set for students
    json metadata;
};

LoadedDecoder load_decoder(Context& ctx, const std::string& key)
{
    auto ckpt = ctx.load(key, {"decoder", "student"});
    LoadedDecoder d;
    d.model = PixelDecoder(ckpt.meta.config.get<DecoderConfig>());
    load_module_tensors(*d.model, ckpt.tensors);
    d.model->eval();
    d.metadata = ckpt.meta.metadata;
    if (ckpt.meta.kind == "student")
        d.schedule = flow::SigmaSchedule(ckpt.meta.metadata.at("schedule").get<std::vector<double>>());
    return d;
}

BaseLdm load_base_ldm(Context& ctx)
{
    auto ckpt = ctx.load("base_ldm", {"base_ldm"});
    const auto cfg = ckpt.meta.config.at("ldm").get<BaseLdmConfig>();
    Backbone model(cfg.backbone);
    load_module_tensors(*model, ckpt.tensors, "backbone");
    model->eval();
    return BaseLdm(cfg, encoder_from_json(ckpt.meta.config.at("encoder")), model);
}

std::vector<TextCondition> one_caption(const std::string& caption)
{
    return {caption.empty() ? TextCondition{} : Vocabulary::parse(caption)};
}

void save_latent(Context& ctx, const fs::path& out, const torch::Tensor& values, const EncoderSpec& spec, double sigma,
                 const std::vector<TextCondition>& texts, json extra)
{
    CheckpointMeta meta;
    meta.kind = "latent";
    meta.config = {{"encoder", encoder_json(spec)}};
    extra["sigma"] = sigma;
    std::vector<std::string> captions;
    for (const auto& t : texts)
        captions.push_back(Vocabulary::decode(t));
    extra["captions"] = captions;
    meta.metadata = std::move(extra);
    save_checkpoint(out, {{"latent", values.contiguous()}}, meta);
    ctx.produced(out);
}

// ---------------------------------------------------------------------------
// Stages

void stage_gen_data(Context& ctx)
{
    const auto& rc = ctx.config;
    const auto n = rc.get_int("n");
    const auto seed = static_cast<uint64_t>(rc.get_int("seed"));
    const auto buckets = parse_buckets(rc.get_text("buckets"));
    const auto out = ctx.path("out");
    auto corpus = generate_corpus(n, seed, buckets);
    CheckpointMeta meta;
    meta.kind = "corpus";
    meta.config = {{"n", n}, {"seed", seed}, {"buckets", rc.get_text("buckets")}};
    save_checkpoint(out, corpus_tensors(corpus), meta);
    ctx.produced(out);

    std::vector<torch::Tensor> preview;
    for (const auto& s : corpus) {
        if (s.image.sizes() != corpus.front().image.sizes())
            continue;
        preview.push_back(s.image);
        if (preview.size() == 8)
            break;
    }
    const auto png = sibling(out, ".preview.png");
    write_png(png, tile_row(torch::stack(preview)));
    ctx.produced(png);
    ctx.out << "wrote " << corpus.size() << " samples to " << out.string() << "\n";
}

void stage_train_vae(Context& ctx)
{
    const auto& rc = ctx.config;
    const auto scale = checked_scale(rc);
    auto corpus = load_corpus(ctx);

    // The VAE sees sources, i.e. corpus images reduced by `scale`; the most
    // common bucket is used so the images stack.
    std::map<std::vector<int64_t>, std::vector<torch::Tensor>> by_size;
    for (const auto& s : corpus)
        by_size[s.image.sizes().vec()].push_back(s.image);
    auto best = std::max_element(by_size.begin(), by_size.end(),
                                 [](const auto& a, const auto& b) { return a.second.size() < b.second.size(); });
    std::vector<torch::Tensor> sources;
    for (const auto& img : best->second)
        sources.push_back(area_downsample(img.unsqueeze(0), scale).squeeze(0));

    VaeConfig vc;
    vc.latent_channels = rc.get_int("latent_channels");
    vc.kl_weight = rc.get_real("kl_weight");
    auto cfg = train_config(rc);
    auto result = train_vae(sources, vc, cfg, progress(ctx.out, cfg.steps));

    const auto out = ctx.path("out");
    CheckpointMeta meta;
    meta.kind = "vae";
    meta.config = vc;
    meta.step = cfg.steps;
    meta.metadata = {{"train", cfg}, {"encoder", encoder_json(result.model->spec())}};
    save_checkpoint(out, module_tensors(*result.model), meta);
    ctx.produced(out);
    write_loss_outputs(ctx, out, result.log);
}

void save_model_pair(Context& ctx, const std::string& kind, const json& config, const json& metadata, int64_t step,
                     const NamedTensors& raw, const NamedTensors& ema, const std::string& prefix)
{
    const auto out = ctx.path("out");
    CheckpointMeta meta{kind, config, step, false, metadata};
    save_checkpoint(out, prefix.empty() ? raw : with_prefix(raw, prefix), meta);
    ctx.produced(out);
    if (!ema.empty()) {
        meta.ema = true;
        const auto e = ema_path(out);
        save_checkpoint(e, prefix.empty() ? ema : with_prefix(ema, prefix), meta);
        ctx.produced(e);
    }
}

void stage_train_prior(Context& ctx)
{
    const auto& rc = ctx.config;
    auto corpus = load_corpus(ctx);
    auto cfg = train_config(rc);
    PriorTrainResult result;
    if (rc.has("init"))
        result = train_prior(load_prior(ctx, "init"), corpus, cfg, progress(ctx.out, cfg.steps));
    else
        result = train_prior(corpus, preset(rc), cfg, progress(ctx.out, cfg.steps));
    save_model_pair(ctx, "prior", result.model->config(), {{"train", cfg}}, cfg.steps, module_tensors(*result.model),
                    result.ema, "backbone");
    write_loss_outputs(ctx, ctx.path("out"), result.log);
}

void stage_train_decoder(Context& ctx)
{
    const auto& rc = ctx.config;
    checked_scale(rc);
    auto prior = load_prior(ctx, "prior");
    auto vae = load_vae(ctx);
    auto corpus = load_corpus(ctx);
    auto cfg = train_config(rc);

    AdapterConfig ac;
    ac.latent_channels = vae->config().latent_channels;
    PixelDecoder decoder(PixelDecoderImpl::from_prior(prior, ac, cfg.seed));
    auto encoder = make_latent_encoder(vae);
    auto result = train_decoder(decoder, encoder, corpus, cfg, progress(ctx.out, cfg.steps));

    json metadata = {{"train", cfg}, {"scale", cfg.scale}, {"encoder", encoder_json(encoder.spec)}};
    save_model_pair(ctx, "decoder", result.model->config(), metadata, cfg.steps, module_tensors(*result.model),
                    result.ema, "");
    write_loss_outputs(ctx, ctx.path("out"), result.log);
}

void stage_train_base_ldm(Context& ctx)
{
    const auto& rc = ctx.config;
    const auto scale = checked_scale(rc);
    auto vae = load_vae(ctx);
    auto corpus = load_corpus(ctx);
    auto cfg = train_config(rc);

    const auto factor = vae->config().downsample_factor();
    const auto side = corpus.front().image.size(1);
    if (side % (scale * factor) != 0)
        rc.fail("scale", "image side " + std::to_string(side) + " is not divisible by scale x VAE factor");
    auto ldm = BaseLdmConfig::desk(vae->config().latent_channels, side / (scale * factor));
    auto encoder = make_latent_encoder(vae);
    auto result = train_base_ldm(&encoder, corpus, ldm, cfg, progress(ctx.out, cfg.steps));

    json config = {{"ldm", ldm}, {"encoder", encoder_json(encoder.spec)}};
    save_model_pair(ctx, "base_ldm", config, {{"train", cfg}}, cfg.steps, module_tensors(*result.model), result.ema,
                    "backbone");
    write_loss_outputs(ctx, ctx.path("out"), result.log);
}

void stage_distill(Context& ctx)
{
    const auto& rc = ctx.config;
    const auto scale = checked_scale(rc);
    auto teacher_dec = load_decoder(ctx, "decoder");
    if (teacher_dec.schedule)
        rc.fail("decoder", "expected a multi-step decoder, got a student");
    auto vae = load_vae(ctx);
    auto corpus = load_corpus(ctx);

    std::vector<double> sigmas;
    for (const auto& s : split(rc.get_text("schedule"), ','))
        sigmas.push_back(std::stod(s));

    DistillConfig dc;
    dc.student_sigmas = flow::SigmaSchedule(sigmas);
    dc.dmd_weight = rc.get_real("dmd_weight");
    dc.dsm_weight = rc.get_real("dsm_weight");
    dc.gan_weight = rc.get_real("gan_weight");
    dc.r1_weight = rc.get_real("r1_weight");
    dc.lr = dc.fake_lr = dc.disc_lr = rc.get_real("lr");
    dc.guidance_weight_teacher = rc.get_real("guidance");
    dc.fake_updates_per_student = rc.get_int("fake_updates_per_student");
    dc.sigma_max = rc.get_real("sigma_max");
    dc.batch_size = rc.get_int("batch_size");
    dc.iterations = rc.get_int("iterations");
    dc.seed = static_cast<uint64_t>(rc.get_int("seed"));
    dc.validate();

    // Batches come from a single bucket, chosen by the first draw.
    std::map<std::vector<int64_t>, std::vector<size_t>> buckets;
    for (size_t i = 0; i < corpus.size(); ++i)
        buckets[corpus[i].image.sizes().vec()].push_back(i);
    auto encoder = make_latent_encoder(vae);
    auto backbone = teacher_dec.model->backbone();
    DistillDataFn data = [&, scale](Rng& rng, int64_t B) {
        const auto first = static_cast<size_t>(rng.randint_scalar(static_cast<int64_t>(corpus.size())));
        const auto& pool = buckets.at(corpus[first].image.sizes().vec());
        std::vector<size_t> idx{first};
        while (static_cast<int64_t>(idx.size()) < B)
            idx.push_back(pool[static_cast<size_t>(rng.randint_scalar(static_cast<int64_t>(pool.size())))]);
        auto batch = make_batch(corpus, idx);
        torch::NoGradGuard no_grad;
        auto pairs = make_decoder_pairs(batch.images, encoder, scale);
        auto sigma = flow::sample_training_sigma(rng, B, dc.sigma_max).to(pairs.latent.scalar_type());
        auto noise = rng.normal(pairs.latent.sizes(), pairs.latent.scalar_type());
        LatentInput latent{flow::corrupt_latent(pairs.latent, sigma, noise), sigma, {}};
        return DistillBatch{FlowCondition{backbone->encode_text(batch.captions), latent}, pairs.target};
    };

    const auto& bc = teacher_dec.model->config().backbone;
    auto disc = std::make_shared<TokenDiscriminatorImpl>(bc.hidden_dim, bc.num_heads, dc.seed);
    auto teacher = std::make_shared<DecoderFlowModel>(teacher_dec.model);
    DistillTrainer trainer(teacher, dc, data, disc);
    const int64_t every = std::max<int64_t>(1, dc.iterations / 20);
    auto records = trainer.run(dc.iterations, [&](const DistillRecord& r) {
        if ((r.iteration + 1) % every == 0)
            ctx.out << "iteration " << r.iteration + 1 << "/" << dc.iterations << " student " << r.student_total
                    << " fake " << r.fake_total << "\n";
    });

    auto student = std::dynamic_pointer_cast<DecoderFlowModel>(trainer.student());
    const auto out = ctx.path("out");
    CheckpointMeta meta;
    meta.kind = "student";
    meta.config = student->decoder()->config();
    meta.step = dc.iterations;
    meta.metadata = teacher_dec.metadata;
    meta.metadata["distill"] = dc;
    meta.metadata["schedule"] = sigmas;
    save_checkpoint(out, student->named_tensors(), meta);
    ctx.produced(out);

    const auto log = rc.has("log") ? rc.get_path("log") : sibling(out, ".csv");
    {
        std::ofstream f(log);
        f << DistillTrainer::to_csv(records);
    }
    ctx.produced(log);
    PlotSeries s_student, s_fake;
    for (const auto& r : records) {
        s_fake.x.push_back(static_cast<double>(r.iteration));
        s_fake.y.push_back(r.fake_total);
        if (r.student_updated) {
            s_student.x.push_back(static_cast<double>(r.iteration));
            s_student.y.push_back(r.student_total);
        }
    }
    if (!records.empty()) {
        const auto png = sibling(out, ".loss.png");
        write_line_plot(png, {s_student, s_fake});
        ctx.produced(png);
    }
}

void stage_encode(Context& ctx)
{
    auto vae = load_vae(ctx);
    auto img = read_png(ctx.path("image"));
    torch::NoGradGuard no_grad;
    auto z = vae->encode(img.unsqueeze(0));
    save_latent(ctx, ctx.path("out"), z, vae->spec(), 0.0, {TextCondition{}}, json::object());
}

void stage_sample_latent(Context& ctx)
{
    const auto& rc = ctx.config;
    auto ldm = load_base_ldm(ctx);
    const auto N = rc.get_int("N");
    const auto M = rc.get_int("M") == 0 ? N : rc.get_int("M");
    if (M > N)
        rc.fail("M", "must not exceed N");
    auto texts = one_caption(rc.get_text("caption"));
    Rng rng(mix_seed(static_cast<uint64_t>(rc.get_int("seed")), "base_ldm"));
    torch::NoGradGuard no_grad;
    auto partial = ldm.sample(texts, N, M, rng, rc.get_real("guidance"));
    save_latent(ctx, ctx.path("out"), partial.latent.values, partial.latent.encoder, partial.residual_sigma, texts,
                {{"steps_taken", partial.steps_taken}, {"steps_total", partial.steps_total}});
}

void stage_decode(Context& ctx)
{
    const auto& rc = ctx.config;
    auto dec = load_decoder(ctx, "decoder");
    auto latent = ctx.load("latent", {"latent"});

    DecodeRequest req;
    req.latent.latent.values = latent.at("latent");
    req.latent.latent.encoder = encoder_from_json(latent.meta.config.at("encoder"));
    const double sigma = rc.get_real("sigma");
    req.latent.sigma = sigma >= 0.0 ? sigma : latent.meta.metadata.at("sigma").get<double>();
    const auto batch = req.latent.latent.values.size(0);
    if (rc.has("caption")) {
        req.texts.assign(static_cast<size_t>(batch), one_caption(rc.get_text("caption")).front());
    } else {
        for (const auto& c : latent.meta.metadata.value("captions", std::vector<std::string>{}))
            req.texts.push_back(c.empty() ? TextCondition{} : Vocabulary::parse(c));
        if (static_cast<int64_t>(req.texts.size()) != batch)
            req.texts.assign(static_cast<size_t>(batch), TextCondition{});
    }
    req.scale = checked_scale(rc);
    req.steps = rc.get_int("steps");
    req.schedule = dec.schedule;
    req.guidance = rc.get_real("guidance");
    req.seed = static_cast<uint64_t>(rc.get_int("seed"));
    req.on_warning = [&](const std::string& w) { ctx.out << "warning: " << w << "\n"; };

    torch::NoGradGuard no_grad;
    auto image = decode(req, dec.model);
    const auto out = ctx.path("out");
    write_png(out, batch == 1 ? image[0] : tile_row(image));
    ctx.produced(out);
}

void stage_sweep(Context& ctx)
{
    const auto& rc = ctx.config;
    auto dec = load_decoder(ctx, "decoder");
    auto ldm = load_base_ldm(ctx);
    std::vector<TextCondition> texts;
    for (const auto& c : split(rc.get_text("captions"), ';'))
        texts.push_back(Vocabulary::parse(c));
    if (texts.empty())
        rc.fail("captions", "no captions given");

    EarlyExitOptions opts;
    opts.scale = checked_scale(rc);
    opts.decode_steps = rc.get_int("steps");
    opts.schedule = dec.schedule;
    opts.seed = static_cast<uint64_t>(rc.get_int("seed"));
    opts.on_warning = [](const std::string&) {};
    torch::NoGradGuard no_grad;
    auto report = sweep_exit_steps(texts, rc.get_int("N"), dec.model, ldm, opts);

    const auto dir = ctx.path("out");
    fs::create_directories(dir);
    report.write_csv(dir / "sweep.csv");
    report.write_plot(dir / "sweep.png");
    ctx.produced(dir / "sweep.csv");
    ctx.produced(dir / "sweep.png");
}

void stage_benchmark(Context& ctx)
{
    const auto& rc = ctx.config;
    BenchmarkOptions opts;
    opts.repeats = rc.get_int("repeats");
    opts.warmup = rc.get_int("warmup");
    opts.steps = rc.get_int("steps");
    opts.seed = static_cast<uint64_t>(rc.get_int("seed"));

    PixelDecoder decoder{nullptr};
    if (rc.has("decoder")) {
        auto dec = load_decoder(ctx, "decoder");
        decoder = dec.model;
        opts.schedule = dec.schedule;
        opts.scale = dec.metadata.value("scale", opts.scale);
        if (dec.metadata.contains("encoder"))
            opts.latent_factor = encoder_from_json(dec.metadata.at("encoder")).downsample_factor;
    } else {
        decoder = PixelDecoder(DecoderConfig{BackboneConfig::desk_fast(), AdapterConfig{}}, opts.seed);
        decoder->eval();
    }
    opts.latent_channels = decoder->config().adapter.latent_channels;

    std::vector<int64_t> sides;
    for (const auto& s : split(rc.get_text("sides"), ',')) {
        try {
            sides.push_back(std::stoll(s));
        } catch (const std::exception&) {
            rc.fail("sides", "'" + s + "' is not an integer");
        }
    }
    torch::NoGradGuard no_grad;
    auto table = benchmark(decoder, sides, opts);
    const auto dir = ctx.path("out");
    fs::create_directories(dir);
    table.write_csv(dir / "benchmark.csv");
    table.write_plot(dir / "benchmark.png");
    ctx.produced(dir / "benchmark.csv");
    ctx.produced(dir / "benchmark.png");
    for (const auto& r : table.rows)
        ctx.out << r.side << "x" << r.side << ": "
                << (r.skipped ? "skipped (" + r.note + ")" : std::to_string(r.median_ms) + " ms median") << "\n";
}

using StageFn = std::function<void(Context&)>;

const std::map<std::string, StageFn>& stage_table()
{
    static const std::map<std::string, StageFn> table = {
        {"gen-data", stage_gen_data},         {"train-vae", stage_train_vae},
        {"train-prior", stage_train_prior},   {"train-decoder", stage_train_decoder},
        {"train-base-ldm", stage_train_base_ldm}, {"distill", stage_distill},
        {"encode", stage_encode},             {"sample-latent", stage_sample_latent},
        {"decode", stage_decode},             {"sweep", stage_sweep},
        {"benchmark", stage_benchmark},
    };
    return table;
}

// Relative outputs land under $PIXDEC_OUT_DIR when it is set; every path is
// made absolute and inputs are checked for existence before a stage starts.
RunConfig resolve_paths(const StageSchema& schema, RunConfig rc)
{
    std::map<std::string, std::string> flags;
    const char* env = std::getenv(kOutDirEnv);
    for (const auto& [k, v] : rc.values()) {
        const auto* spec = schema.find(k);
        if (spec->kind != ValueKind::Path) {
            flags[k] = v.text;
            continue;
        }
        fs::path p = v.text;
        const bool redirect = p.is_relative() && env && *env;
        if (is_output_key(k) && redirect)
            p = fs::path(env) / p;
        else if (redirect && !fs::exists(p) && fs::exists(fs::path(env) / p))
            p = fs::path(env) / p; // inputs fall back to the output directory
        p = fs::absolute(p).lexically_normal();
        if (!is_output_key(k) && !fs::exists(p))
            throw MissingInputError(v.origin + ": key '" + k + "': no such file " + p.string());
        flags[k] = p.string();
    }
    return RunConfig::resolve(schema, std::nullopt, flags);
}

void write_manifest(const Context& ctx, const fs::path& path)
{
    const auto canonical = ctx.config.canonical();
    json j;
    j["stage"] = ctx.config.stage();
    j["config"] = json::object();
    for (const auto& [k, v] : ctx.config.values())
        j["config"][k] = v.text;
    j["config_hash"] = sha256_hex(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(canonical.data()),
                                                            canonical.size()));
    j["seeds"] = json::object();
    if (ctx.config.has("seed"))
        j["seeds"]["seed"] = ctx.config.get_int("seed");
    j["inputs"] = ctx.inputs;
    j["outputs"] = ctx.outputs;
    j["checkpoint_format_version"] = kCheckpointFormatVersion;
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp);
        f << j.dump(2) << "\n";
    }
    fs::rename(tmp, path);
}

fs::path manifest_path(const RunConfig& rc)
{
    const auto out = rc.get_path("out");
    const auto& stage = rc.stage();
    if (stage == "sweep" || stage == "benchmark")
        return out / "manifest.json";
    return fs::path(out.string() + ".manifest.json");
}

int execute(const std::string& stage, const std::optional<fs::path>& config_file,
            const std::map<std::string, std::string>& flags, std::ostream& out, std::ostream& err)
{
    try {
        const auto& schema = stage_schema(stage);
        auto rc = resolve_paths(schema, RunConfig::resolve(schema, config_file, flags));
        Context ctx{rc, out, {}, {}, {}};
        for (const auto& [k, v] : rc.values())
            if (schema.find(k)->kind == ValueKind::Path && !is_output_key(k))
                ctx.inputs[k] = artifact_digest(v.text);
        if (rc.has("threads") && rc.get_int("threads") > 0)
            torch::set_num_threads(static_cast<int>(rc.get_int("threads")));
        const auto out_path = rc.get_path("out");
        if (out_path.has_parent_path())
            fs::create_directories(out_path.parent_path());
        stage_table().at(stage)(ctx);
        const auto manifest = manifest_path(rc);
        write_manifest(ctx, manifest);
        out << "manifest " << manifest.string() << "\n";
        return kOk;
    } catch (const RunConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kBadConfig;
    } catch (const MissingInputError& e) {
        err << "missing input: " << e.what() << "\n";
        return kMissingInput;
    } catch (const MissingCheckpointError& e) {
        err << "missing checkpoint: " << e.what() << "\n";
        return kMissingInput;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return kCorruptArtifact;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kBadConfig;
    } catch (const DomainError& e) {
        err << "domain error: " << e.what() << "\n";
        return kBadConfig;
    } catch (const ShapeError& e) {
        err << "shape error: " << e.what() << "\n";
        return kBadConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

std::string option_names(const std::string& key)
{
    auto names = "--" + key;
    auto dashed = key;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    if (dashed != key)
        names += ",--" + dashed;
    return names;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"pixdec: latent-conditioned pixel diffusion decoding"};
    app.name("pixdec");
    app.require_subcommand(1);

    struct StageOptions {
        std::map<std::string, std::string> values;
        std::map<std::string, CLI::Option*> options;
        std::string config_file;
        std::vector<std::string> sets;
        CLI::Option* config_opt = nullptr;
    };
    std::map<std::string, StageOptions> stages;
    for (const auto& schema : stage_schemas()) {
        auto* sub = app.add_subcommand(schema.stage, schema.summary);
        auto& so = stages[schema.stage];
        for (const auto& spec : schema.keys) {
            std::string help = spec.help;
            if (spec.required)
                help += " (required)";
            else if (!spec.default_value.empty())
                help += " (default " + spec.default_value + ")";
            so.options[spec.key] = sub->add_option(option_names(spec.key), so.values[spec.key], help);
        }
        so.config_opt = sub->add_option("--config", so.config_file, "key = value config file");
        sub->add_option("--set", so.sets, "extra key=value override (repeatable)");
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kBadConfig;
    }

    const auto stage = app.get_subcommands().front()->get_name();
    auto& so = stages.at(stage);
    std::map<std::string, std::string> flags;
    for (const auto& s : so.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            err << "config error: --set: expected key=value, got '" << s << "'\n";
            return kBadConfig;
        }
        flags[s.substr(0, eq)] = s.substr(eq + 1);
    }
    for (const auto& [key, opt] : so.options)
        if (opt->count() > 0)
            flags[key] = so.values.at(key);
    std::optional<fs::path> config_file;
    if (so.config_opt->count() > 0)
        config_file = so.config_file;
    return execute(stage, config_file, flags, out, err);
}

int run(int argc, char** argv)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i)
        args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

} // namespace pixdec::cli
