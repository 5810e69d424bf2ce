// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only
// when every criterion passes.
//
//   acceptance [--only N[,N...]] [--work DIR] [--keep]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cli.hpp"
#include "d3ssl/augment.hpp"
#include "d3ssl/config.hpp"
#include "d3ssl/data.hpp"
#include "d3ssl/diagnostics.hpp"
#include "d3ssl/encoder.hpp"
#include "d3ssl/eval_oknn.hpp"
#include "d3ssl/loss.hpp"
#include "d3ssl/trainer.hpp"
#include "support/aug_checks.hpp"
#include "support/oracles.hpp"
#include "support/subset_fixtures.hpp"

using namespace d3ssl;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

constexpr int kStagesAll[] = {1, 2, 3, 4, 5};

// --- desk-scale experiment shared by criteria 5, 6 and 7 ---------------------

constexpr int kTrainImages = 500;
constexpr int kEvalImages = 200;
constexpr std::uint64_t kDataSeed = 1;
constexpr std::uint64_t kTrainSeed = 1;
constexpr std::uint64_t kEvalDataSeed = 2;
constexpr std::uint64_t kFixtureSeed = 99;

trainer::TrainConfig desk_config(bool depositioning)
{
    trainer::TrainConfig cfg;
    cfg.epochs = 20;
    cfg.proposals_per_image = 4;
    cfg.seed = kTrainSeed;
    cfg.depositioning = depositioning;
    cfg.deterministic = true;
    return cfg;
}

struct Model
{
    encoder::EncoderConfig cfg;
    encoder::Parameters params;
    double first_loss = 0.0, last_epoch_loss = 0.0;
    double seconds = 0.0;
};

class Context
{
public:
    explicit Context(fs::path work)
        : m_work(std::move(work))
    {
    }

    const fs::path& work() const { return m_work; }

    const data::Dataset& train_set()
    {
        if (!m_train)
            m_train = data::write_synthetic_dataset(m_work / "train", kTrainImages, data::SceneSpec{},
                                                    data::ProposalSpec{}, kDataSeed);
        return *m_train;
    }

    const data::Dataset& eval_set()
    {
        if (!m_eval)
            m_eval = data::write_synthetic_dataset(m_work / "eval", kEvalImages, data::SceneSpec{},
                                                   data::ProposalSpec{}, kEvalDataSeed);
        return *m_eval;
    }

    const Model& model(bool depositioning)
    {
        auto& slot = depositioning ? m_full : m_dc_only;
        if (!slot)
            slot = train(depositioning);
        return *slot;
    }

    const diagnostics::FixtureSet& fixtures()
    {
        if (!m_fixtures)
            m_fixtures = diagnostics::make_fixtures(kFixtureSeed);
        return *m_fixtures;
    }

    const diagnostics::DiagnosticsReport& report(bool depositioning)
    {
        auto& slot = depositioning ? m_report_full : m_report_dc;
        if (!slot)
        {
            const Model& m = model(depositioning);
            const auto t0 = std::chrono::steady_clock::now();
            slot = diagnostics::probe_report(encoder::Encoder(m.cfg), m.params, fixtures(), kStagesAll);
            m_probe_seconds += seconds_since(t0);
        }
        return *slot;
    }

    // Training plus probing time of the two desk runs.
    double desk_seconds() const
    {
        return (m_full ? m_full->seconds : 0.0) + (m_dc_only ? m_dc_only->seconds : 0.0) + m_probe_seconds;
    }

private:
    Model train(bool depositioning)
    {
        const auto t0 = std::chrono::steady_clock::now();
        const data::Dataset& ds = train_set();
        const auto proposals = data::load_proposals(m_work / "train" / "proposals.jsonl", &ds);
        const auto samples = trainer::load_samples(ds, proposals);
        const trainer::TrainConfig cfg = desk_config(depositioning);
        trainer::RunOptions opts;
        opts.out_dir = m_work / (depositioning ? "run_full" : "run_dc_only");
        const long steps_per_epoch = (kTrainImages + cfg.batch_size - 1) / cfg.batch_size;
        Model m;
        double epoch_sum = 0.0;
        long epoch_steps = 0;
        opts.on_step = [&](const trainer::StepMetrics& s) {
            if (s.step == 0)
                m.first_loss = s.loss;
            if (s.step >= steps_per_epoch * (cfg.epochs - 1))
            {
                epoch_sum += s.loss;
                ++epoch_steps;
            }
        };
        const fs::path ckpt = trainer::run_pretrain(cfg, samples, opts);
        const trainer::Checkpoint c = trainer::load_checkpoint(ckpt);
        m.cfg = c.encoder;
        m.params = c.student;
        m.last_epoch_loss = epoch_steps ? epoch_sum / static_cast<double>(epoch_steps) : 0.0;
        m.seconds = seconds_since(t0);
        return m;
    }

    fs::path m_work;
    std::optional<data::Dataset> m_train, m_eval;
    std::optional<Model> m_full, m_dc_only;
    std::optional<diagnostics::FixtureSet> m_fixtures;
    std::optional<diagnostics::DiagnosticsReport> m_report_full, m_report_dc;
    double m_probe_seconds = 0.0;
};

// --- 1 -----------------------------------------------------------------------

Outcome augmentation_invariants(Context&)
{
    using checks::random_boxes;
    using checks::random_image;
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(20240101);
    const augment::AugConfig cfg;
    const int draws = 10000;
    long prc_records = 0, prm_records = 0, rbj_boxes = 0;
    for (int i = 0; i < draws; ++i)
    {
        const int W = uniform_int(rng, 16, 64), H = uniform_int(rng, 16, 64);
        const Tensor img = random_image(rng, 3, H, W);
        const auto props = random_boxes(rng, W, H, uniform_int(rng, 1, 5));

        const augment::PrcResult c = augment::prc(img, props, rng, cfg);
        if (auto e = checks::check_prc(img, c, props, cfg); !e.empty())
            return {false, "draw " + std::to_string(i) + " PRC: " + e};
        prc_records += static_cast<long>(c.cutouts.size());

        const augment::PrmResult m = augment::prm(c.image, props, rng, cfg);
        if (auto e = checks::check_prm(c.image, m, props, cfg); !e.empty())
            return {false, "draw " + std::to_string(i) + " PRM: " + e};
        prm_records += static_cast<long>(m.records.size());

        for (const auto& b : props)
        {
            if (auto e = checks::check_rbj(b, augment::rbj(b, rng, cfg)); !e.empty())
                return {false, "draw " + std::to_string(i) + " RBJ: " + e};
            ++rbj_boxes;
        }

        const Tensor xb = random_image(rng, 3, H, W);
        const geometry::Shift t = geometry::sample_shared_shift(props, W, H, rng);
        std::vector<geometry::BBox> moved;
        for (const auto& b : props)
            moved.push_back(geometry::apply(b, t));
        const geometry::Mask mask = augment::build_foreground_mask(props, W, H);
        const geometry::Mask m_hat = augment::prc(augment::build_foreground_mask(moved, W, H), moved, rng, cfg);
        const Tensor x3 = augment::compose(img, mask, xb, m_hat, t);
        if (auto e = checks::check_compose(img, xb, m_hat, t, x3); !e.empty())
            return {false, "draw " + std::to_string(i) + " compose: " + e};
    }
    const double s = seconds_since(t0);
    return {s < 120.0, std::to_string(draws) + " draws (" + std::to_string(prc_records) + " cutouts, " +
                           std::to_string(prm_records) + " masks, " + std::to_string(rbj_boxes) +
                           " jitters), 0 violations, " + fmt(s, 3) + " s (limit 120 s)"};
}

// --- 2 -----------------------------------------------------------------------

Feature basis(std::size_t d, std::size_t i)
{
    std::vector<float> v(d, 0.0f);
    v[i] = 1.0f;
    return Feature(std::move(v));
}

std::vector<double> random_unit(Rng& rng, std::size_t d)
{
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(d);
    double s = 0;
    for (auto& x : v)
    {
        x = n(rng);
        s += x * x;
    }
    for (auto& x : v)
        x /= std::sqrt(s);
    return v;
}

Feature random_feature(Rng& rng, std::size_t d)
{
    const auto v = random_unit(rng, d);
    std::vector<float> f(v.begin(), v.end());
    double s = 0;
    for (float x : f)
        s += double(x) * x;
    for (auto& x : f)
        x = static_cast<float>(x / std::sqrt(s));
    return Feature(std::move(f));
}

Outcome loss_correctness(Context&)
{
    using namespace loss;
    const auto t0 = std::chrono::steady_clock::now();
    const Feature e1 = basis(4, 0), e2 = basis(4, 1), e3 = basis(4, 2);
    const std::vector<Feature> orth{e2}, third{e3};
    const double v0 = info_nce(e1, e1, {}, 0.2);
    const double v1 = info_nce(e1, e1, orth, 1.0);
    const double v2 = info_nce(e1, e2, third, 1.0);
    if (std::abs(v0) > 1e-6 || std::abs(v1 - 0.313262) > 1e-6 || std::abs(v2 - 0.693147) > 1e-6)
        return {false, "closed forms " + fmt(v0, 8) + ", " + fmt(v1, 8) + ", " + fmt(v2, 8)};

    Rng rng(77);
    const double eps = 1e-3;
    double worst_rel = 0.0;
    for (int trial = 0; trial < 100; ++trial)
    {
        const std::size_t d = static_cast<std::size_t>(uniform_int(rng, 4, 32));
        std::vector<Feature> negs_f;
        for (int n = uniform_int(rng, 1, 16); n > 0; --n)
            negs_f.push_back(random_feature(rng, d));
        const NegativeSet negs(negs_f);
        const auto z = random_unit(rng, d), p = random_unit(rng, d);
        const double tau = uniform(rng, 0.2, 1.0);
        std::vector<double> gz(d), gp(d);
        info_nce_kernel(z, p, negs, tau, gz, gp);
        for (int which = 0; which < 2; ++which)
        {
            const auto& g = which == 0 ? gz : gp;
            double diff = 0, norm = 0;
            for (std::size_t i = 0; i < d; ++i)
            {
                auto zp = z, zm = z, pp = p, pm = p;
                (which == 0 ? zp : pp)[i] += eps;
                (which == 0 ? zm : pm)[i] -= eps;
                const double num = (info_nce_kernel(which == 0 ? zp : z, which == 0 ? p : pp, negs, tau) -
                                    info_nce_kernel(which == 0 ? zm : z, which == 0 ? p : pm, negs, tau)) /
                                   (2 * eps);
                diff += (num - g[i]) * (num - g[i]);
                norm += g[i] * g[i];
            }
            worst_rel = std::max(worst_rel, std::sqrt(diff) / std::sqrt(norm));
        }
    }
    if (!(worst_rel < 1e-4))
        return {false, "finite-difference relative error " + fmt(worst_rel)};

    double worst_comp = 0.0;
    for (int trial = 0; trial < 100; ++trial)
    {
        std::vector<Feature> bank;
        for (int n = 0; n < 8; ++n)
            bank.push_back(random_feature(rng, 16));
        const Feature s1 = random_feature(rng, 16), s2 = random_feature(rng, 16), s3 = random_feature(rng, 16);
        const Feature t1 = random_feature(rng, 16), t2 = random_feature(rng, 16);
        const double dc = decoupling_loss(s1, s2, t1, t2, bank, 0.2);
        const double dp = depositioning_loss(s3, t1, t2, bank, 0.2);
        worst_comp = std::max(worst_comp, std::abs(dc - (oracle::naive_nce(s1, t2, bank, 0.2) +
                                                         oracle::naive_nce(s2, t1, bank, 0.2))));
        worst_comp = std::max(worst_comp, std::abs(dp - (oracle::naive_nce(s3, t2, bank, 0.2) +
                                                         oracle::naive_nce(s3, t1, bank, 0.2))));
    }
    const double s = seconds_since(t0);
    const bool ok = worst_comp < 1e-6 && s < 60.0;
    return {ok, "closed forms within 1e-6, max FD rel. error " + fmt(worst_rel, 3) + " (100 instances), max "
                    "composition error " + fmt(worst_comp, 3) + ", " + fmt(s, 3) + " s (limit 60 s)"};
}

// --- 3 -----------------------------------------------------------------------

std::vector<trainer::Sample> small_samples(int count, std::uint64_t seed)
{
    std::vector<trainer::Sample> out;
    for (int i = 0; i < count; ++i)
    {
        Rng rng = derive_rng(seed, {static_cast<std::uint64_t>(i)});
        auto scene = data::synth_scene(rng, data::SceneSpec{});
        auto props = data::grid_proposals(64, 64, data::ProposalSpec{}, scene.objects, rng);
        out.push_back({"s" + std::to_string(i), std::move(scene.image), std::move(props)});
    }
    return out;
}

Outcome momentum_contract(Context&)
{
    trainer::TrainConfig cfg;
    cfg.encoder.backbone.widths = {4, 8, 8, 16, 16};
    cfg.encoder.feature_dim = 16;
    cfg.loss.bank_capacity = 64;
    cfg.batch_size = 2;
    cfg.seed = 5;
    const encoder::Encoder enc(cfg.encoder);

    // Coefficient edge cases on unrelated parameter vectors.
    encoder::EncoderPair pair{enc.initialize(1), enc.initialize(2), 0.0};
    encoder::momentum_update(pair);
    if (pair.teacher != pair.student)
        return {false, "m = 0 did not copy the student"};
    pair = {enc.initialize(1), enc.initialize(2), 1.0};
    const encoder::Parameters before = pair.teacher;
    encoder::momentum_update(pair);
    if (pair.teacher != before)
        return {false, "m = 1 changed the teacher"};

    // Around a full train_step: with m = 1 the teacher is bitwise unchanged
    // although the student moved; with m = 0.99 the teacher is exactly the
    // momentum blend of its old value and the updated student.
    const auto samples = small_samples(2, 9);
    cfg.momentum_coefficient = 1.0;
    trainer::TrainState s1 = trainer::initial_state(enc, cfg);
    const encoder::Parameters t_before = s1.pair.teacher, q_before = s1.pair.student;
    trainer::train_step(enc, s1, samples, cfg, 10);
    if (s1.pair.teacher != t_before)
        return {false, "teacher changed during a train_step with m = 1"};
    if (s1.pair.student == q_before)
        return {false, "student did not move"};

    cfg.momentum_coefficient = 0.99;
    trainer::TrainState s2 = trainer::initial_state(enc, cfg);
    const encoder::Parameters t0 = s2.pair.teacher;
    trainer::train_step(enc, s2, samples, cfg, 10);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < t0.size(); ++i)
    {
        const float want = static_cast<float>(
            t0.values[i] + (1.0 - 0.99) * (static_cast<double>(s2.pair.student.values[i]) - t0.values[i]));
        mismatches += std::memcmp(&want, &s2.pair.teacher.values[i], sizeof(float)) != 0;
    }
    if (mismatches)
        return {false, std::to_string(mismatches) + " teacher parameters differ from the momentum blend"};
    return {true, "m = 0 copies, m = 1 freezes, teacher bitwise untouched by the optimizer across train_step (" +
                      std::to_string(t0.size()) + " parameters)"};
}

// --- 4 -----------------------------------------------------------------------

Outcome positional_probe(Context& ctx)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto& fx = ctx.fixtures();
    std::ostringstream detail;
    bool ok = true;
    for (const auto padding : {nn::Padding::Zero, nn::Padding::Circular})
    {
        encoder::EncoderConfig cfg;
        cfg.backbone = encoder::BackboneSpec::toy(padding);
        const encoder::Encoder enc(cfg);
        const auto params = enc.initialize(kFixtureSeed);
        const auto rep = diagnostics::probe_report(enc, params, fx, kStagesAll, diagnostics::Probe::Position);
        const bool zero = padding == nn::Padding::Zero;
        detail << (zero ? "zero-padded MCS" : "; circular MCS");
        for (const auto& s : rep.stages)
        {
            detail << " C" << s.stage << "=" << fmt(s.mcs, zero ? 4 : 8);
            ok &= zero ? s.mcs >= 0.9 : std::abs(s.mcs - 1.0) <= 1e-5;
            // Every individual patch, not just the mean, for the circular case.
            if (!zero)
                for (const auto& patch : fx.patches)
                    for (double v : diagnostics::grid_mcs_stages(enc, params, patch, std::span(&s.stage, 1)))
                        ok &= std::abs(v - 1.0) <= 1e-5;
        }
    }
    const double s = seconds_since(t0);
    ok &= s < 60.0;
    detail << "; " << fx.patches.size() << " patches, " << fmt(s, 3) << " s (limit 60 s)";
    return {ok, detail.str()};
}

// --- 5 -----------------------------------------------------------------------

Outcome coupling_trend(Context& ctx)
{
    const auto& rep = ctx.report(true);
    const double c2 = rep.stages[1].cr, c5 = rep.stages[4].cr;
    std::ostringstream d;
    d << "trained model, " << rep.stages[4].cr_samples << " pairs, geometric-mean CR:";
    for (const auto& s : rep.stages)
        d << " C" << s.stage << "=" << fmt(s.cr, 5);
    d << "; need CR(C5) > CR(C2)";
    return {rep.stages[4].cr_samples >= 20 && c5 > c2, d.str()};
}

// --- 6 -----------------------------------------------------------------------

Outcome ablation_direction(Context& ctx)
{
    const auto& rf = ctx.report(true);
    const auto& rd = ctx.report(false);
    const Model& full = ctx.model(true);
    const Model& dc = ctx.model(false);
    const double s = ctx.desk_seconds();
    std::ostringstream d;
    d << "L_dc only: CR " << fmt(rd.mean_cr(), 6) << " MCS " << fmt(rd.mean_mcs(), 6) << "; L_dc+L_dp: CR "
      << fmt(rf.mean_cr(), 6) << " MCS " << fmt(rf.mean_mcs(), 6) << " (mean over C1-C5, "
      << rf.stages[0].cr_samples << " pairs, " << rf.stages[0].mcs_samples << " patches); loss "
      << fmt(dc.first_loss) << "->" << fmt(dc.last_epoch_loss) << " and " << fmt(full.first_loss) << "->"
      << fmt(full.last_epoch_loss) << "; " << fmt(s, 4) << " s for both runs (limit 1800 s)";
    const bool ok = rf.mean_cr() < rd.mean_cr() && rf.mean_mcs() > rd.mean_mcs() && s < 1800.0;
    return {ok, d.str()};
}

// --- 7 -----------------------------------------------------------------------

Outcome oknn_protocol(Context& ctx)
{
    const Model& m = ctx.model(true);
    const encoder::Encoder enc(m.cfg);
    const auto train = oknn::load_labeled(ctx.train_set());
    const auto eval = oknn::load_labeled(ctx.eval_set(), &ctx.train_set());

    oknn::OknnConfig self_cfg;
    self_cfg.k = 1;
    self_cfg.per_image = 16;
    const std::span<const oknn::LabeledImage> fixture(train.data(), 50);
    const oknn::OknnResult self = oknn::oknn_score(enc, m.params, fixture, fixture, self_cfg, false);

    const oknn::OknnConfig cfg;
    const oknn::OknnResult clean = oknn::oknn_score(enc, m.params, train, eval, cfg, false);
    const oknn::OknnResult dist = oknn::oknn_score(enc, m.params, train, eval, cfg, true);

    std::ostringstream d;
    d << "self-retrieval top1 " << fmt(self.top1, 6) << " (" << self.queries << " objects); 8-class split top1 "
      << fmt(clean.top1) << " top5 " << fmt(clean.top5) << " (k=" << cfg.k << ", N=" << cfg.per_image << ", bank "
      << clean.bank_size << ", " << clean.queries << " queries, need >= 0.25); disturbed top1 " << fmt(dist.top1)
      << " (need <= undisturbed)";
    return {self.top1 == 1.0 && clean.top1 >= 0.25 && dist.top1 <= clean.top1, d.str()};
}

// --- 8 -----------------------------------------------------------------------

Outcome subset_fixtures(Context&)
{
    const fixtures::CapFixture cap;
    const fixtures::PairCapFixture pair;
    const fixtures::SelfFixture self;
    const auto disjoint = fixtures::labeled({{"s1", {"x"}}, {"s2", {"y", "z"}}});
    int runs = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed)
    {
        const auto a = data::mini_subset_select(cap.source, cap.reference, seed);
        if (std::set<std::string>(a.image_ids.begin(), a.image_ids.end()) != cap.expected)
            return {false, "cap fixture seed " + std::to_string(seed) + " selected a different set"};
        const auto b = data::mini_subset_select(pair.source, pair.reference, seed);
        if (b.image_ids.size() != pair.expected_count)
            return {false, "pair-cap fixture seed " + std::to_string(seed) + " selected " +
                               std::to_string(b.image_ids.size())};
        const auto c = data::mini_subset_select(self.set, self.set, seed);
        if (std::set<std::string>(c.image_ids.begin(), c.image_ids.end()) != self.expected)
            return {false, "self fixture seed " + std::to_string(seed) + " selected a different set"};
        if (!data::mini_subset_select(disjoint, cap.reference, seed).image_ids.empty())
            return {false, "disjoint classes selected something"};
        for (const auto* r : {&a, &b})
            if (auto e = fixtures::cap_violation(*r, r == &a ? cap.source : pair.source); !e.empty())
                return {false, "cap violated: " + e};
        if (auto e = fixtures::cap_violation(c, self.set); !e.empty())
            return {false, "cap violated: " + e};
        runs += 4;
    }
    return {true, std::to_string(runs) + " selections over 4 hand-built fixtures and 50 seeds match exactly, no cap "
                                         "violations"};
}

// --- 9 -----------------------------------------------------------------------

nlohmann::json manifest_without_times(const fs::path& p, const std::string& run_dir)
{
    auto j = nlohmann::json::parse(slurp(p));
    j.erase("started_at");
    j.erase("finished_at");
    for (auto& o : j["outputs"])
    {
        std::string s = o.get<std::string>();
        if (s.starts_with(run_dir))
            s = s.substr(run_dir.size());
        o = s;
    }
    return j;
}

Outcome pretrain_determinism(Context& ctx)
{
    const fs::path dir = ctx.work() / "determinism";
    std::ostringstream sink;
    if (cli::dispatch({"synth", "--count", "24", "--seed", "3", "--out", (dir / "data").string()}, sink, sink) != 0)
        return {false, "synth failed: " + sink.str()};
    std::vector<std::string> runs;
    for (const char* name : {"a", "b"})
    {
        const std::string out = (dir / name).string();
        const std::vector<std::string> args{"pretrain", "--data", (dir / "data").string(), "--out", out, "--epochs", "2",
                                            "--checkpoint-every", "1", "--deterministic", "--seed", "7"};
        if (cli::dispatch(args, sink, sink) != 0)
            return {false, "pretrain failed: " + sink.str()};
        runs.push_back(out);
    }
    int files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(runs[0]))
    {
        if (!entry.is_regular_file())
            continue;
        const fs::path rel = fs::relative(entry.path(), runs[0]);
        const fs::path other = fs::path(runs[1]) / rel;
        if (!fs::exists(other))
            return {false, rel.string() + " missing from the second run"};
        if (rel == "manifest.json")
        {
            if (manifest_without_times(entry.path(), runs[0]) != manifest_without_times(other, runs[1]))
                return {false, "manifests differ beyond timestamps"};
        }
        else if (slurp(entry.path()) != slurp(other))
            return {false, rel.string() + " differs between runs"};
        ++files;
    }
    const std::string metrics = slurp(fs::path(runs[0]) / "metrics.jsonl");
    const auto lines = std::count(metrics.begin(), metrics.end(), '\n');
    return {files >= 5, "pretrain --deterministic --seed 7 twice: " + std::to_string(files) +
                            " files identical (metrics.jsonl with " + std::to_string(lines) +
                            " steps, 2 checkpoints + sidecars, manifest up to timestamps)"};
}

struct Criterion
{
    int id;
    const char* name;
    std::function<Outcome(Context&)> run;
};

} // namespace

int main(int argc, char** argv)
{
    std::set<int> only;
    fs::path work = fs::temp_directory_path() / "d3ssl_acceptance";
    bool keep = false;
    for (int i = 1; i < argc; ++i)
    {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc)
            for (int v : config::parse_ints("only", argv[++i]))
                only.insert(v);
        else if (a == "--work" && i + 1 < argc)
            work = argv[++i];
        else if (a == "--keep")
            keep = true;
        else
        {
            std::cerr << "usage: acceptance [--only N[,N...]] [--work DIR] [--keep]\n";
            return 2;
        }
    }
    fs::remove_all(work);
    fs::create_directories(work);

    const std::vector<Criterion> criteria = {
        {1, "augmentation invariants", augmentation_invariants},
        {2, "loss correctness", loss_correctness},
        {3, "momentum/teacher contract", momentum_contract},
        {4, "positional-bias probe sanity", positional_probe},
        {5, "coupling probe trend", coupling_trend},
        {6, "ablation direction (CR down, MCS up)", ablation_direction},
        {7, "O-KNN protocol", oknn_protocol},
        {8, "subset selector", subset_fixtures},
        {9, "pretrain determinism", pretrain_determinism},
    };

    Context ctx(work);
    int failed = 0;
    for (const auto& c : criteria)
    {
        if (!only.empty() && !only.count(c.id))
            continue;
        Outcome o;
        try
        {
            o = c.run(ctx);
        }
        catch (const std::exception& e)
        {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << std::endl;
    }
    if (!keep)
        fs::remove_all(work);
    return failed == 0 ? 0 : 1;
}
