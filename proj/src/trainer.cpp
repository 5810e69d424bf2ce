#include "d3ssl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numbers>
#include <numeric>

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/utility.hpp>
#include <cereal/types/vector.hpp>

#include "json.hpp"

#include "d3ssl/error.hpp"
#include "d3ssl/hash.hpp"
#include "d3ssl/image.hpp"

namespace d3ssl::trainer {

using config::format_double;
using config::join;

TrainConfig::TrainConfig()
{
    aug.view_size = 64;
}

void TrainConfig::validate() const
{
    if (epochs < 0)
        throw ConfigError("epochs must be >= 0");
    if (batch_size < 1)
        throw ConfigError("batch_size must be >= 1");
    if (!(base_lr >= 0.0))
        throw ConfigError("lr must be >= 0");
    if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0))
        throw ConfigError("sgd_momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0))
        throw ConfigError("weight_decay must be >= 0");
    if (proposals_per_image < 1)
        throw ConfigError("k must be >= 1");
    if (!(momentum_coefficient >= 0.0 && momentum_coefficient <= 1.0))
        throw ConfigError("momentum must lie in [0,1]");
    if (workers < 1)
        throw ConfigError("workers must be >= 1");
    if (checkpoint_every < 0)
        throw ConfigError("checkpoint_every must be >= 0");
    aug.validate();
    loss.validate();
    const encoder::Encoder enc(encoder);
    const int unit = 2 * encoder.backbone.c4_stride();
    if (aug.view_size % unit != 0)
        throw ConfigError("view_size must be a multiple of " + std::to_string(unit) +
                          " so that x1, x2 and x2s fit the C4 stride");
}

namespace {

std::string range_text(const augment::Range& r)
{
    return format_double(r.lo) + "," + format_double(r.hi);
}

augment::Range parse_range(const std::string& key, const std::string& value)
{
    const auto v = config::parse_doubles(key, value);
    if (v.size() != 2)
        throw ConfigError("option '" + key + "' expects 'lo,hi'");
    return {v[0], v[1]};
}

std::array<int, encoder::kStages> parse_stage_ints(const std::string& key, const std::string& value)
{
    const auto v = config::parse_ints(key, value);
    if (v.size() != encoder::kStages)
        throw ConfigError("option '" + key + "' expects " + std::to_string(encoder::kStages) + " values");
    std::array<int, encoder::kStages> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
}

std::vector<int> to_vector(const std::array<int, encoder::kStages>& a)
{
    return {a.begin(), a.end()};
}

} // namespace

void set_option(TrainConfig& cfg, const std::string& key, const std::string& value)
{
    using namespace config;
    auto& a = cfg.aug;
    auto& bb = cfg.encoder.backbone;
    if (key == "epochs")
        cfg.epochs = parse_int(key, value);
    else if (key == "batch_size")
        cfg.batch_size = parse_int(key, value);
    else if (key == "lr")
        cfg.base_lr = parse_double(key, value);
    else if (key == "lr_schedule")
    {
        if (value == "cosine")
            cfg.schedule = LrSchedule::Cosine;
        else if (value == "constant")
            cfg.schedule = LrSchedule::Constant;
        else
            throw ConfigError("option 'lr_schedule' expects cosine or constant, got '" + value + "'");
    }
    else if (key == "optimizer")
    {
        if (value != "sgd")
            throw ConfigError("option 'optimizer' supports only sgd, got '" + value + "'");
    }
    else if (key == "sgd_momentum")
        cfg.sgd_momentum = parse_double(key, value);
    else if (key == "weight_decay")
        cfg.weight_decay = parse_double(key, value);
    else if (key == "k")
        cfg.proposals_per_image = parse_int(key, value);
    else if (key == "seed")
        cfg.seed = static_cast<std::uint64_t>(parse_long(key, value));
    else if (key == "momentum")
        cfg.momentum_coefficient = parse_double(key, value);
    else if (key == "depositioning")
        cfg.depositioning = parse_bool(key, value);
    else if (key == "random_bank_init")
        cfg.random_bank_init = parse_bool(key, value);
    else if (key == "workers")
        cfg.workers = parse_int(key, value);
    else if (key == "deterministic")
        cfg.deterministic = parse_bool(key, value);
    else if (key == "checkpoint_every")
        cfg.checkpoint_every = parse_int(key, value);
    else if (key == "temperature")
        cfg.loss.temperature = parse_double(key, value);
    else if (key == "bank_capacity")
    {
        const long n = parse_long(key, value);
        if (n < 1)
            throw ConfigError("option 'bank_capacity' must be >= 1");
        cfg.loss.bank_capacity = static_cast<std::size_t>(n);
    }
    else if (key == "view_size")
        a.view_size = parse_int(key, value);
    else if (key == "crop_scale")
        a.crop_scale = parse_range(key, value);
    else if (key == "crop_aspect")
        a.crop_aspect = parse_range(key, value);
    else if (key == "min_visible")
        a.min_visible = parse_double(key, value);
    else if (key == "prc_range")
        a.prc_range = parse_range(key, value);
    else if (key == "prc_cover_threshold")
        a.prc_cover_threshold = parse_double(key, value);
    else if (key == "cutouts_per_proposal")
        a.cutouts_per_proposal = parse_int(key, value);
    else if (key == "prm_scale_range")
        a.prm_scale_range = parse_range(key, value);
    else if (key == "prm_aspect_range")
        a.prm_aspect_range = parse_range(key, value);
    else if (key == "prm_mode")
    {
        if (value == "paste")
            a.prm_mode = augment::PrmMode::PasteBackground;
        else if (value == "expand")
            a.prm_mode = augment::PrmMode::ExpandRoi;
        else
            throw ConfigError("option 'prm_mode' expects paste or expand, got '" + value + "'");
    }
    else if (key == "rbj_scale_range")
        a.rbj_scale_range = parse_range(key, value);
    else if (key == "rbj_shift_frac")
        a.rbj_shift_frac = parse_double(key, value);
    else if (key == "backbone")
    {
        const nn::Padding padding = bb.padding;
        const auto variant = encoder::variant_from_string(value);
        bb = variant == encoder::Variant::Toy ? encoder::BackboneSpec::toy(padding)
                                              : encoder::BackboneSpec::resnet50_c4();
        bb.padding = padding;
    }
    else if (key == "padding")
        bb.padding = encoder::padding_from_string(value);
    else if (key == "widths")
        bb.widths = parse_stage_ints(key, value);
    else if (key == "kernels")
        bb.kernels = parse_stage_ints(key, value);
    else if (key == "feature_dim")
        cfg.encoder.feature_dim = parse_int(key, value);
    else if (key == "roi_size")
        cfg.encoder.roi_size = parse_int(key, value);
    else if (key == "sampling_ratio")
        cfg.encoder.sampling_ratio = parse_int(key, value);
    else
        throw ConfigError("unknown option '" + key + "'");
}

config::KeyValues options(const TrainConfig& cfg)
{
    const auto& a = cfg.aug;
    const auto& bb = cfg.encoder.backbone;
    return {
        {"epochs", std::to_string(cfg.epochs)},
        {"batch_size", std::to_string(cfg.batch_size)},
        {"lr", format_double(cfg.base_lr)},
        {"lr_schedule", cfg.schedule == LrSchedule::Cosine ? "cosine" : "constant"},
        {"optimizer", "sgd"},
        {"sgd_momentum", format_double(cfg.sgd_momentum)},
        {"weight_decay", format_double(cfg.weight_decay)},
        {"k", std::to_string(cfg.proposals_per_image)},
        {"seed", std::to_string(cfg.seed)},
        {"momentum", format_double(cfg.momentum_coefficient)},
        {"depositioning", cfg.depositioning ? "true" : "false"},
        {"random_bank_init", cfg.random_bank_init ? "true" : "false"},
        {"workers", std::to_string(cfg.workers)},
        {"deterministic", cfg.deterministic ? "true" : "false"},
        {"checkpoint_every", std::to_string(cfg.checkpoint_every)},
        {"temperature", format_double(cfg.loss.temperature)},
        {"bank_capacity", std::to_string(cfg.loss.bank_capacity)},
        {"view_size", std::to_string(a.view_size)},
        {"crop_scale", range_text(a.crop_scale)},
        {"crop_aspect", range_text(a.crop_aspect)},
        {"min_visible", format_double(a.min_visible)},
        {"prc_range", range_text(a.prc_range)},
        {"prc_cover_threshold", format_double(a.prc_cover_threshold)},
        {"cutouts_per_proposal", std::to_string(a.cutouts_per_proposal)},
        {"prm_scale_range", range_text(a.prm_scale_range)},
        {"prm_aspect_range", range_text(a.prm_aspect_range)},
        {"prm_mode", a.prm_mode == augment::PrmMode::PasteBackground ? "paste" : "expand"},
        {"rbj_scale_range", range_text(a.rbj_scale_range)},
        {"rbj_shift_frac", format_double(a.rbj_shift_frac)},
        {"backbone", encoder::to_string(bb.variant)},
        {"padding", encoder::to_string(bb.padding)},
        {"widths", join(to_vector(bb.widths))},
        {"kernels", join(to_vector(bb.kernels))},
        {"feature_dim", std::to_string(cfg.encoder.feature_dim)},
        {"roi_size", std::to_string(cfg.encoder.roi_size)},
        {"sampling_ratio", std::to_string(cfg.encoder.sampling_ratio)},
    };
}

std::vector<std::string> option_keys()
{
    std::vector<std::string> keys;
    for (const auto& [k, v] : options(TrainConfig{}))
        keys.push_back(k);
    return keys;
}

double learning_rate(const TrainConfig& cfg, long step, long total_steps)
{
    if (cfg.schedule == LrSchedule::Constant || total_steps <= 0)
        return cfg.base_lr;
    const double progress = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<Sample> load_samples(const data::Dataset& ds, const data::ProposalIndex& proposals)
{
    std::vector<Sample> samples;
    samples.reserve(ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i)
    {
        const auto& rec = ds.images[i];
        const auto it = proposals.find(rec.id);
        if (it == proposals.end())
            throw DataError("no proposals for image " + rec.id);
        samples.push_back({rec.id, ds.load_image(i), it->second});
    }
    return samples;
}

// --- one step ----------------------------------------------------------------

PreparedSample prepare_sample(std::span<const Sample> batch, std::size_t index, long step, const TrainConfig& cfg)
{
    const Sample& sample = batch[index];
    const auto& aug = cfg.aug;
    Rng rng = derive_rng(cfg.seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(index)});
    PreparedSample p;
    try
    {
        p.views = augment::make_views(sample.image, sample.proposals, rng, aug);
    }
    catch (const NoSurvivingProposals& e)
    {
        p.skipped = true;
        p.skip_reason = e.what();
        return p;
    }

    std::vector<int> order(p.views.kept.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int K = cfg.proposals_per_image;
    const int used = std::min<int>(K, static_cast<int>(order.size()));
    p.used.assign(order.begin(), order.begin() + used);
    for (int k = 0; k < K; ++k)
        p.slots.push_back(k % used);

    std::vector<BBox> u1, u2, u2s;
    for (const int j : p.used)
    {
        u1.push_back(p.views.boxes_v1[static_cast<std::size_t>(j)]);
        u2.push_back(p.views.boxes_v2[static_cast<std::size_t>(j)]);
        u2s.push_back(p.views.boxes_v2s[static_cast<std::size_t>(j)]);
    }

    auto c1 = augment::prc(p.views.x1, u1, rng, aug);
    auto r1 = augment::prm(c1.image, u1, rng, aug);
    auto c2 = augment::prc(p.views.x2s, u2s, rng, aug);
    auto r2 = augment::prm(c2.image, u2s, rng, aug);
    p.x1_hat = std::move(r1.image);
    p.x2s_hat = std::move(r2.image);
    p.cutouts_x1 = std::move(c1.cutouts);
    p.cutouts_x2s = std::move(c2.cutouts);
    p.masks_x1 = std::move(r1.records);
    p.masks_x2s = std::move(r2.records);

    for (int j = 0; j < used; ++j)
    {
        p.box_v1.push_back(augment::rbj(r1.boxes[static_cast<std::size_t>(j)], rng, aug));
        p.box_v2s.push_back(augment::rbj(r2.boxes[static_cast<std::size_t>(j)], rng, aug));
        p.box_v2.push_back(augment::rbj(u2[static_cast<std::size_t>(j)], rng, aug));
    }

    if (!cfg.depositioning)
        return p;

    const int S = aug.view_size;
    p.shift = geometry::sample_shared_shift(u2, S, S, rng);
    p.m = augment::build_foreground_mask(u2, S, S);
    for (const BBox& b : u2)
        p.box_v3.push_back(geometry::apply(b, p.shift));
    p.m_hat = augment::prc(augment::build_foreground_mask(p.box_v3, S, S), p.box_v3, rng, aug);

    if (batch.size() > 1)
    {
        int other = uniform_int(rng, 0, static_cast<int>(batch.size()) - 2);
        if (other >= static_cast<int>(index))
            ++other;
        p.background = other;
        p.xb = image::resize(batch[static_cast<std::size_t>(other)].image, S, S);
    }
    else
    {
        p.xb = Tensor(3, S, S);
        for (std::size_t i = 0; i < p.xb.size(); ++i)
            p.xb.data()[i] = static_cast<float>(uniform(rng, 0.0, 1.0));
    }
    p.x3 = augment::compose(p.views.x2, p.m, p.xb, p.m_hat, p.shift);
    return p;
}

TrainState initial_state(const encoder::Encoder& enc, const TrainConfig& cfg)
{
    TrainState st;
    st.pair.student = enc.initialize(cfg.seed);
    st.pair.teacher = st.pair.student;
    st.pair.momentum = cfg.momentum_coefficient;
    st.velocity.assign(st.pair.student.size(), 0.0f);
    st.bank = loss::MemoryBank(cfg.loss.bank_capacity);
    if (cfg.random_bank_init)
    {
        Rng rng = derive_rng(cfg.seed, {0xBA4CULL});
        std::normal_distribution<double> normal(0.0, 1.0);
        const auto d = static_cast<std::size_t>(cfg.encoder.feature_dim);
        std::vector<double> v(d);
        for (std::size_t n = 0; n < cfg.loss.bank_capacity; ++n)
        {
            double s = 0.0;
            for (auto& x : v)
            {
                x = normal(rng);
                s += x * x;
            }
            std::vector<float> f(d);
            for (std::size_t i = 0; i < d; ++i)
                f[i] = static_cast<float>(v[i] / std::sqrt(s));
            st.bank.enqueue(Feature(std::move(f)));
        }
    }
    return st;
}

std::string to_json_line(const StepMetrics& m)
{
    nlohmann::ordered_json j;
    j["step"] = m.step;
    j["epoch"] = m.epoch;
    j["lr"] = m.lr;
    j["loss"] = m.loss;
    j["loss_dc"] = m.loss_dc;
    j["loss_dp"] = m.loss_dp;
    j["images"] = m.images;
    j["skipped"] = m.skipped;
    j["bank"] = m.bank_size;
    return j.dump();
}

namespace {

std::vector<PreparedSample> prepare_batch(std::span<const Sample> batch, long step, const TrainConfig& cfg)
{
    std::vector<PreparedSample> out(batch.size());
    const int workers = std::min<int>(cfg.effective_workers(), static_cast<int>(batch.size()));
    if (workers <= 1)
    {
        for (std::size_t i = 0; i < batch.size(); ++i)
            out[i] = prepare_sample(batch, i, step, cfg);
        return out;
    }
    std::vector<std::future<void>> jobs;
    for (int w = 0; w < workers; ++w)
        jobs.push_back(std::async(std::launch::async, [&, w] {
            for (std::size_t i = static_cast<std::size_t>(w); i < batch.size(); i += static_cast<std::size_t>(workers))
                out[i] = prepare_sample(batch, i, step, cfg);
        }));
    for (auto& j : jobs)
        j.get();
    return out;
}

std::vector<double> scaled(const std::vector<double>& g, double w)
{
    std::vector<double> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        out[i] = w * g[i];
    return out;
}

} // namespace

StepMetrics train_step(const encoder::Encoder& enc, TrainState& state, std::span<const Sample> batch,
                       const TrainConfig& cfg, long total_steps)
{
    StepMetrics metrics;
    metrics.step = state.step;
    metrics.epoch = state.epoch;
    metrics.lr = learning_rate(cfg, state.step, total_steps);

    const std::vector<PreparedSample> prepared = prepare_batch(batch, state.step, cfg);
    for (const auto& p : prepared)
        (p.skipped ? metrics.skipped : metrics.images) += 1;

    const auto bank_before = state.bank.snapshot();
    const loss::NegativeSet negatives(bank_before);
    const double tau = cfg.loss.temperature;
    const int K = cfg.proposals_per_image;
    const auto& student = state.pair.student;
    const auto& teacher = state.pair.teacher;
    std::vector<float> grads(student.size(), 0.0f);
    std::vector<Feature> teacher_features;

    for (const PreparedSample& p : prepared)
    {
        if (p.skipped)
            continue;
        const std::size_t used = p.used.size();
        std::vector<Feature> zt1(used), zt2(used);
        {
            const auto v1 = enc.begin_view(teacher, p.x1_hat, false);
            const auto v2 = enc.begin_view(teacher, p.views.x2, false);
            for (std::size_t j = 0; j < used; ++j)
            {
                zt1[j] = enc.forward_region(teacher, v1, p.box_v1[j], false).z;
                zt2[j] = enc.forward_region(teacher, v2, p.box_v2[j], false).z;
            }
        }

        auto s1 = enc.begin_view(student, p.x1_hat, true);
        auto s2 = enc.begin_view(student, p.x2s_hat, true);
        std::vector<encoder::Encoder::RegionPass> r1, r2, r3;
        for (std::size_t j = 0; j < used; ++j)
        {
            r1.push_back(enc.forward_region(student, s1, p.box_v1[j], true));
            r2.push_back(enc.forward_region(student, s2, p.box_v2s[j], true));
        }
        std::optional<encoder::Encoder::ViewPass> s3;
        if (cfg.depositioning)
        {
            s3 = enc.begin_view(student, p.x3, true);
            for (std::size_t j = 0; j < used; ++j)
                r3.push_back(enc.forward_region(student, *s3, p.box_v3[j], true));
        }

        std::vector<int> multiplicity(used, 0);
        for (const int slot : p.slots)
            ++multiplicity[static_cast<std::size_t>(slot)];

        std::vector<double> dc(used, 0.0), dp(used, 0.0);
        for (std::size_t j = 0; j < used; ++j)
        {
            const double w = static_cast<double>(multiplicity[j]) / (K * static_cast<double>(metrics.images));
            const auto a = loss::info_nce_grad(r1[j].z, zt2[j], negatives, tau);
            const auto b = loss::info_nce_grad(r2[j].z, zt1[j], negatives, tau);
            dc[j] = a.loss + b.loss;
            enc.backward_region(student, grads, r1[j], scaled(a.d_anchor, w), s1);
            enc.backward_region(student, grads, r2[j], scaled(b.d_anchor, w), s2);
            if (cfg.depositioning)
            {
                const auto c = loss::info_nce_grad(r3[j].z, zt2[j], negatives, tau);
                const auto d = loss::info_nce_grad(r3[j].z, zt1[j], negatives, tau);
                dp[j] = c.loss + d.loss;
                std::vector<double> dz = scaled(c.d_anchor, w);
                for (std::size_t i = 0; i < dz.size(); ++i)
                    dz[i] += w * d.d_anchor[i];
                enc.backward_region(student, grads, r3[j], dz, *s3);
            }
        }
        enc.backward_view(student, grads, s1);
        enc.backward_view(student, grads, s2);
        if (s3)
            enc.backward_view(student, grads, *s3);

        std::vector<double> dc_slots, dp_slots;
        for (const int slot : p.slots)
        {
            dc_slots.push_back(dc[static_cast<std::size_t>(slot)]);
            dp_slots.push_back(dp[static_cast<std::size_t>(slot)]);
        }
        metrics.loss += loss::total_loss(dc_slots, dp_slots);
        metrics.loss_dc += std::accumulate(dc_slots.begin(), dc_slots.end(), 0.0) / K;
        metrics.loss_dp += std::accumulate(dp_slots.begin(), dp_slots.end(), 0.0) / K;

        for (std::size_t j = 0; j < used; ++j)
        {
            teacher_features.push_back(std::move(zt1[j]));
            teacher_features.push_back(std::move(zt2[j]));
        }
    }

    if (metrics.images > 0)
    {
        metrics.loss /= metrics.images;
        metrics.loss_dc /= metrics.images;
        metrics.loss_dp /= metrics.images;

        auto& theta = state.pair.student.values;
        const double mu = cfg.sgd_momentum;
        const double wd = cfg.weight_decay;
        for (std::size_t i = 0; i < theta.size(); ++i)
        {
            const double g = static_cast<double>(grads[i]) + wd * theta[i];
            const double v = mu * state.velocity[i] + g;
            state.velocity[i] = static_cast<float>(v);
            theta[i] = static_cast<float>(theta[i] - metrics.lr * v);
        }
    }

    state.pair.momentum = cfg.momentum_coefficient;
    encoder::momentum_update(state.pair);
    loss::bank_update(state.bank, teacher_features);
    metrics.bank_size = state.bank.size();
    ++state.step;
    return metrics;
}

// --- checkpoints -------------------------------------------------------------

namespace {

constexpr const char* kMagic = "d3ssl-checkpoint-1";

} // namespace

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg)
{
    Checkpoint c;
    c.encoder = cfg.encoder;
    c.config = options(cfg);
    c.step = state.step;
    c.epoch = state.epoch;
    c.student = state.pair.student;
    c.teacher = state.pair.teacher;
    c.velocity = state.velocity;
    c.bank_capacity = state.bank.capacity();
    c.bank = state.bank.snapshot();
    return c;
}

TrainState restore_state(const Checkpoint& ckpt, const TrainConfig& cfg)
{
    if (!(ckpt.encoder == cfg.encoder))
        throw ConfigError("checkpoint encoder architecture differs from the configuration");
    const encoder::Encoder enc(cfg.encoder);
    if (ckpt.student.size() != enc.parameter_count() || ckpt.teacher.size() != enc.parameter_count() ||
        ckpt.velocity.size() != enc.parameter_count())
        throw DataError("checkpoint parameter count does not match the encoder");
    TrainState st;
    st.pair = {ckpt.student, ckpt.teacher, cfg.momentum_coefficient};
    st.velocity = ckpt.velocity;
    st.bank = loss::MemoryBank(ckpt.bank_capacity);
    loss::bank_update(st.bank, ckpt.bank);
    st.step = ckpt.step;
    st.epoch = ckpt.epoch;
    return st;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write checkpoint " + path.string());
    cereal::PortableBinaryOutputArchive ar(out);
    const auto& bb = c.encoder.backbone;
    std::vector<std::vector<float>> bank;
    for (const auto& f : c.bank)
        bank.emplace_back(f.values().begin(), f.values().end());
    ar(std::string(kMagic), static_cast<int>(bb.variant), to_vector(bb.widths), to_vector(bb.strides),
       to_vector(bb.kernels), static_cast<int>(bb.padding), c.encoder.feature_dim, c.encoder.roi_size,
       c.encoder.sampling_ratio);
    ar(c.config, static_cast<std::int64_t>(c.step), c.epoch, c.student.values, c.teacher.values, c.velocity,
       static_cast<std::uint64_t>(c.bank_capacity), bank);

    nlohmann::ordered_json j;
    j["backbone"] = encoder::to_string(bb.variant);
    j["d"] = c.encoder.feature_dim;
    std::string momentum;
    for (const auto& [k, v] : c.config)
        if (k == "momentum")
            momentum = v;
    j["momentum_coefficient"] = momentum.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(std::stod(momentum));
    j["step"] = c.step;
    j["epoch"] = c.epoch;
    j["config_hash"] = hash::sha1_hex(config::to_text(c.config));
    std::ofstream meta(std::filesystem::path(path).replace_extension(".json"));
    if (!meta)
        throw DataError("cannot write checkpoint manifest for " + path.string());
    meta << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open checkpoint " + path.string());
    Checkpoint c;
    try
    {
        cereal::PortableBinaryInputArchive ar(in);
        std::string magic;
        ar(magic);
        if (magic != kMagic)
            throw DataError(path.string() + " is not a checkpoint");
        int variant = 0, padding = 0;
        std::vector<int> widths, strides, kernels;
        ar(variant, widths, strides, kernels, padding, c.encoder.feature_dim, c.encoder.roi_size,
           c.encoder.sampling_ratio);
        if (widths.size() != encoder::kStages || strides.size() != encoder::kStages ||
            kernels.size() != encoder::kStages)
            throw DataError(path.string() + ": malformed backbone description");
        auto& bb = c.encoder.backbone;
        bb.variant = static_cast<encoder::Variant>(variant);
        bb.padding = static_cast<nn::Padding>(padding);
        std::copy(widths.begin(), widths.end(), bb.widths.begin());
        std::copy(strides.begin(), strides.end(), bb.strides.begin());
        std::copy(kernels.begin(), kernels.end(), bb.kernels.begin());
        std::int64_t step = 0;
        std::uint64_t capacity = 0;
        std::vector<std::vector<float>> bank;
        ar(c.config, step, c.epoch, c.student.values, c.teacher.values, c.velocity, capacity, bank);
        c.step = step;
        c.bank_capacity = capacity;
        for (auto& f : bank)
            c.bank.emplace_back(std::move(f));
    }
    catch (const cereal::Exception& e)
    {
        throw DataError(path.string() + ": truncated or corrupt checkpoint (" + e.what() + ")");
    }
    return c;
}

// --- full run ----------------------------------------------------------------

std::filesystem::path run_pretrain(const TrainConfig& cfg, std::span<const Sample> samples, const RunOptions& opts)
{
    cfg.validate();
    if (samples.empty())
        throw EmptyDataset("no training images");
    const encoder::Encoder enc(cfg.encoder);
    TrainState state = opts.resume ? restore_state(load_checkpoint(*opts.resume), cfg) : initial_state(enc, cfg);

    const auto ckpt_dir = opts.out_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    auto ckpt_path = [&](int epoch) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
        return ckpt_dir / name;
    };

    std::ofstream metrics(opts.out_dir / "metrics.jsonl", opts.resume ? std::ios::app : std::ios::trunc);
    if (!metrics)
        throw DataError("cannot write " + (opts.out_dir / "metrics.jsonl").string());

    const long B = cfg.batch_size;
    const long n = static_cast<long>(samples.size());
    const long steps_per_epoch = (n + B - 1) / B;
    const long total_steps = steps_per_epoch * cfg.epochs;

    std::filesystem::path last = ckpt_path(state.epoch);
    if (state.epoch >= cfg.epochs)
    {
        save_checkpoint(make_checkpoint(state, cfg), last);
        return last;
    }

    std::vector<Sample> batch;
    for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch)
    {
        std::vector<std::size_t> order(samples.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = derive_rng(cfg.seed, {0xE90C4ULL, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), rng);

        const long first = std::max(0L, state.step - epoch * steps_per_epoch);
        for (long b = first; b < steps_per_epoch; ++b)
        {
            batch.clear();
            for (long i = b * B; i < std::min(n, (b + 1) * B); ++i)
                batch.push_back(samples[order[static_cast<std::size_t>(i)]]);
            const StepMetrics m = train_step(enc, state, batch, cfg, total_steps);
            metrics << to_json_line(m) << '\n';
            metrics.flush();
            if (opts.on_step)
                opts.on_step(m);
        }
        state.epoch = epoch + 1;
        const bool stop = opts.stop_after_epoch && state.epoch >= *opts.stop_after_epoch;
        const bool periodic = cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0;
        if (periodic || stop || state.epoch == cfg.epochs)
        {
            last = ckpt_path(state.epoch);
            save_checkpoint(make_checkpoint(state, cfg), last);
        }
        if (stop)
            break;
    }
    return last;
}

} // namespace d3ssl::trainer
