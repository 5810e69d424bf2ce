#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "d3ssl/config.hpp"
#include "d3ssl/data.hpp"
#include "d3ssl/diagnostics.hpp"
#include "d3ssl/error.hpp"
#include "d3ssl/eval_oknn.hpp"
#include "d3ssl/hash.hpp"
#include "d3ssl/image.hpp"
#include "d3ssl/trainer.hpp"

namespace d3ssl::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using config::KeyValues;

namespace {

std::string utc_now()
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string dashed(std::string key)
{
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << text;
}

std::uint64_t parse_seed(const std::string& value)
{
    const long v = config::parse_long("seed", value);
    if (v < 0)
        throw ConfigError("option 'seed' must be non-negative, got " + value);
    return static_cast<std::uint64_t>(v);
}

// Key-value settings of one subcommand: defaults, then the config file,
// then command-line flags.
class Settings
{
public:
    explicit Settings(KeyValues defaults)
        : m_values(std::move(defaults))
    {
    }

    void set(const std::string& key, const std::string& value)
    {
        for (auto& [k, v] : m_values)
            if (k == key)
            {
                v = value;
                return;
            }
        throw ConfigError("unknown option '" + key + "'");
    }

    const std::string& get(const std::string& key) const
    {
        for (const auto& [k, v] : m_values)
            if (k == key)
                return v;
        throw std::logic_error("no setting " + key);
    }

    int get_int(const std::string& key) const { return config::parse_int(key, get(key)); }
    bool get_bool(const std::string& key) const { return config::parse_bool(key, get(key)); }
    const KeyValues& values() const { return m_values; }

private:
    KeyValues m_values;
};

// Inputs and outputs recorded in the run manifest.
struct Manifest
{
    std::string subcommand;
    std::string started_at = utc_now();
    KeyValues config;
    std::uint64_t seed = 0;
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;

    void write(const fs::path& path) const
    {
        json j;
        j["subcommand"] = subcommand;
        json cfg = json::object();
        for (const auto& [k, v] : config)
            cfg[k] = v;
        j["config"] = cfg;
        j["seed"] = seed;
        json in = json::array();
        std::string listing;
        for (const auto& p : inputs)
        {
            const std::string id = hash::file_blob_id(p);
            in.push_back({{"path", p.string()}, {"blob", id}});
            listing += id + " " + p.string() + "\n";
        }
        j["inputs"] = in;
        j["inputs_hash"] = hash::sha1_hex(listing);
        json outs = json::array();
        for (const auto& p : outputs)
            outs.push_back(p.string());
        j["outputs"] = outs;
        j["started_at"] = started_at;
        j["finished_at"] = utc_now();
        write_text(path, j.dump(2) + "\n");
    }
};

// Sibling manifest of a single output file: dir/name.json -> dir/name.manifest.json.
fs::path manifest_for(const fs::path& output)
{
    return output.parent_path() / (output.stem().string() + ".manifest.json");
}

struct Common
{
    std::string config_file;
    bool deterministic = false;
    std::map<std::string, std::string> flags; // key -> raw flag value
    std::map<std::string, CLI::Option*> options;
};

void add_setting_flags(CLI::App* app, Common& common, const KeyValues& defaults, const std::vector<std::string>& skip)
{
    for (const auto& [key, value] : defaults)
    {
        if (std::find(skip.begin(), skip.end(), key) != skip.end())
            continue;
        common.options[key] =
            app->add_option("--" + dashed(key), common.flags[key], "default: " + value)->type_name("VALUE");
    }
}

void add_common(CLI::App* app, Common& common)
{
    app->add_option("--config", common.config_file, "key = value settings file (flags take precedence)")
        ->type_name("FILE");
    app->add_flag("--deterministic", common.deterministic, "single worker, bit-reproducible");
}

// Applies file then flags through `apply`; returns the config file for the
// manifest when one was given.
template <typename Apply>
std::optional<fs::path> resolve(const Common& common, Apply&& apply)
{
    std::optional<fs::path> file;
    if (!common.config_file.empty())
    {
        file = common.config_file;
        for (const auto& [k, v] : config::read_file(*file))
            apply(k, v);
    }
    for (const auto& [key, opt] : common.options)
        if (opt->count() > 0)
            apply(key, common.flags.at(key));
    if (common.deterministic)
        apply("deterministic", "true");
    return file;
}

std::vector<fs::path> dataset_files(const data::Dataset& ds, const fs::path& ann)
{
    std::vector<fs::path> files{ann};
    for (const auto& im : ds.images)
        files.push_back(ds.root / im.file);
    return files;
}

// --- pretrain ----------------------------------------------------------------

struct PretrainArgs
{
    Common common;
    std::string data, proposals, out, resume;
};

int run_pretrain(const PretrainArgs& a, std::ostream& out)
{
    trainer::TrainConfig cfg;
    Manifest m;
    m.subcommand = "pretrain";
    if (auto f = resolve(a.common, [&](const std::string& k, const std::string& v) { trainer::set_option(cfg, k, v); }))
        m.inputs.push_back(*f);
    cfg.validate();

    const fs::path ann = fs::path(a.data) / "annotations.jsonl";
    const fs::path props = a.proposals.empty() ? fs::path(a.data) / "proposals.jsonl" : fs::path(a.proposals);
    const data::Dataset ds = data::load_annotations(ann);
    const auto proposals = data::load_proposals(props, &ds);
    const auto samples = trainer::load_samples(ds, proposals);
    for (const auto& p : dataset_files(ds, ann))
        m.inputs.push_back(p);
    m.inputs.push_back(props);

    trainer::RunOptions opts;
    opts.out_dir = a.out;
    if (!a.resume.empty())
    {
        opts.resume = fs::path(a.resume);
        m.inputs.push_back(*opts.resume);
    }
    fs::create_directories(opts.out_dir);
    std::optional<trainer::StepMetrics> first, last;
    opts.on_step = [&](const trainer::StepMetrics& s) {
        if (!first)
            first = s;
        last = s;
    };
    const fs::path ckpt = trainer::run_pretrain(cfg, samples, opts);

    m.config = trainer::options(cfg);
    m.seed = cfg.seed;
    m.outputs = {opts.out_dir / "metrics.jsonl", ckpt};
    m.write(opts.out_dir / "manifest.json");

    out << "images " << samples.size() << ", epochs " << cfg.epochs << "\n";
    if (first && last)
        out << "loss " << config::format_double(first->loss) << " -> " << config::format_double(last->loss) << " over "
            << (last->step - first->step + 1) << " steps\n";
    out << "checkpoint " << ckpt.string() << "\n";
    return 0;
}

// --- probes ------------------------------------------------------------------

KeyValues probe_defaults()
{
    const diagnostics::FixtureSpec f;
    return {{"stages", "1,2,3,4,5"},
            {"fixtures", std::to_string(f.pairs)},
            {"canvas", std::to_string(f.canvas)},
            {"object_size", std::to_string(f.object_size)},
            {"patch_size", std::to_string(f.patch_size)},
            {"weights", "student"},
            {"seed", "0"},
            {"deterministic", "false"}};
}

struct ProbeArgs
{
    Common common;
    std::string checkpoint, out, plot;
};

encoder::Parameters pick_weights(const trainer::Checkpoint& c, const std::string& which)
{
    if (which == "student")
        return c.student;
    if (which == "teacher")
        return c.teacher;
    throw ConfigError("option 'weights' must be student or teacher, got '" + which + "'");
}

int run_probe(const ProbeArgs& a, diagnostics::Probe probe, std::ostream& out)
{
    Settings s(probe_defaults());
    Manifest m;
    m.subcommand = probe == diagnostics::Probe::Coupling ? "probe-coupling" : "probe-position";
    if (auto f = resolve(a.common, [&](const std::string& k, const std::string& v) { s.set(k, v); }))
        m.inputs.push_back(*f);

    const auto stages = config::parse_ints("stages", s.get("stages"));
    if (stages.empty())
        throw ConfigError("option 'stages' is empty");
    for (int st : stages)
        if (st < 1 || st > encoder::kStages)
            throw ConfigError("option 'stages' has stage " + std::to_string(st) + " outside 1..5");
    diagnostics::FixtureSpec spec;
    spec.pairs = spec.patches = s.get_int("fixtures");
    spec.canvas = s.get_int("canvas");
    spec.object_size = s.get_int("object_size");
    spec.patch_size = s.get_int("patch_size");
    const std::uint64_t seed = parse_seed(s.get("seed"));
    s.get_bool("deterministic");

    const trainer::Checkpoint ckpt = trainer::load_checkpoint(a.checkpoint);
    m.inputs.push_back(a.checkpoint);
    const encoder::Encoder enc(ckpt.encoder);
    const encoder::Parameters params = pick_weights(ckpt, s.get("weights"));

    const auto fixtures = diagnostics::make_fixtures(seed, spec);
    auto report = diagnostics::probe_report(enc, params, fixtures, stages, probe);
    report.checkpoint = a.checkpoint;
    const fs::path report_path = a.out;
    write_text(report_path, report.to_json() + "\n");
    m.outputs.push_back(report_path);

    const bool coupling = probe == diagnostics::Probe::Coupling;
    std::vector<double> values;
    for (const auto& st : report.stages)
    {
        values.push_back(coupling ? st.cr : st.mcs);
        out << "C" << st.stage << (coupling ? " CR " : " MCS ") << config::format_double(values.back()) << "\n";
    }
    if (!a.plot.empty())
    {
        const diagnostics::Series series[] = {{fs::path(a.checkpoint).filename().string(), values}};
        diagnostics::plot_stage_curves(a.plot, coupling ? "coupling rate" : "mean cosine similarity", stages,
                                       series);
        m.outputs.push_back(a.plot);
    }
    m.config = s.values();
    m.seed = seed;
    m.write(manifest_for(report_path));
    return 0;
}

// --- oknn --------------------------------------------------------------------

struct OknnArgs
{
    Common common;
    std::string checkpoint, train_ann, eval_ann, out;
    bool disturbed = false;
};

int run_oknn(const OknnArgs& a, std::ostream& out)
{
    const oknn::OknnConfig def;
    Settings s({{"k", std::to_string(def.k)},
                {"n", std::to_string(def.per_image)},
                {"disturbed", "false"},
                {"weights", "student"},
                {"workers", "1"},
                {"seed", "0"},
                {"deterministic", "false"}});
    Manifest m;
    m.subcommand = "oknn";
    if (auto f = resolve(a.common, [&](const std::string& k, const std::string& v) { s.set(k, v); }))
        m.inputs.push_back(*f);
    if (a.disturbed)
        s.set("disturbed", "true");

    oknn::OknnConfig cfg;
    cfg.k = s.get_int("k");
    cfg.per_image = s.get_int("n");
    cfg.seed = parse_seed(s.get("seed"));
    cfg.workers = s.get_bool("deterministic") ? 1 : s.get_int("workers");
    cfg.validate();
    const bool disturbed = s.get_bool("disturbed");

    const trainer::Checkpoint ckpt = trainer::load_checkpoint(a.checkpoint);
    const encoder::Encoder enc(ckpt.encoder);
    const encoder::Parameters params = pick_weights(ckpt, s.get("weights"));
    const data::Dataset train_ds = data::load_annotations(a.train_ann);
    const data::Dataset eval_ds = data::load_annotations(a.eval_ann);
    m.inputs.push_back(a.checkpoint);
    for (const auto& p : dataset_files(train_ds, a.train_ann))
        m.inputs.push_back(p);
    for (const auto& p : dataset_files(eval_ds, a.eval_ann))
        m.inputs.push_back(p);

    const auto train = oknn::load_labeled(train_ds);
    const auto eval = oknn::load_labeled(eval_ds, &train_ds);
    const oknn::OknnResult r = oknn::oknn_score(enc, params, train, eval, cfg, disturbed);
    write_text(a.out, r.to_json() + "\n");
    m.outputs.push_back(a.out);
    m.config = s.values();
    m.seed = cfg.seed;
    m.write(manifest_for(a.out));
    out << (disturbed ? "disturbed " : "") << "top1 " << config::format_double(r.top1) << " top5 "
        << config::format_double(r.top5) << " over " << r.queries << " objects\n";
    return 0;
}

// --- subset ------------------------------------------------------------------

struct SubsetArgs
{
    Common common;
    std::string source, reference, out, report;
};

int run_subset(const SubsetArgs& a, std::ostream& out)
{
    Settings s({{"seed", "0"}, {"deterministic", "false"}});
    Manifest m;
    m.subcommand = "subset";
    if (auto f = resolve(a.common, [&](const std::string& k, const std::string& v) { s.set(k, v); }))
        m.inputs.push_back(*f);
    const std::uint64_t seed = parse_seed(s.get("seed"));
    s.get_bool("deterministic");

    const data::Dataset source = data::load_annotations(a.source, false);
    const data::Dataset reference = data::load_annotations(a.reference, false);
    m.inputs.push_back(a.source);
    m.inputs.push_back(a.reference);
    const data::SubsetResult r = data::mini_subset_select(source, reference, seed);

    std::string ids;
    for (const auto& id : r.image_ids)
        ids += id + "\n";
    write_text(a.out, ids);
    m.outputs.push_back(a.out);
    if (!a.report.empty())
    {
        json j;
        j["selected_images"] = r.image_ids.size();
        json classes = json::object();
        for (const auto& [name, c] : r.counts)
            classes[name] = {{"reference", c.reference}, {"source", c.source}, {"selected", c.selected}};
        j["classes"] = classes;
        write_text(a.report, j.dump(2) + "\n");
        m.outputs.push_back(a.report);
    }
    m.config = s.values();
    m.seed = seed;
    m.write(manifest_for(a.out));
    out << "selected " << r.image_ids.size() << " of " << source.images.size() << " images\n";
    return 0;
}

// --- augment-preview ---------------------------------------------------------

struct PreviewArgs
{
    Common common;
    std::string data, proposals, out, image_id;
};

json box_json(const geometry::BBox& b)
{
    return json::array({b.x1, b.y1, b.x2, b.y2});
}

Tensor hstack(const std::vector<Tensor>& panels, int gap)
{
    int w = 0, h = 0;
    for (const auto& p : panels)
    {
        w += p.width() + gap;
        h = std::max(h, p.height());
    }
    Tensor out(3, h, std::max(w - gap, 1), 1.0f);
    int x = 0;
    for (const auto& p : panels)
    {
        image::paste(p, out, x, 0);
        x += p.width() + gap;
    }
    return out;
}

int run_preview(const PreviewArgs& a, std::ostream& out)
{
    trainer::TrainConfig cfg;
    Manifest m;
    m.subcommand = "augment-preview";
    if (auto f = resolve(a.common, [&](const std::string& k, const std::string& v) { trainer::set_option(cfg, k, v); }))
        m.inputs.push_back(*f);
    cfg.validate();

    const fs::path ann = fs::path(a.data) / "annotations.jsonl";
    const fs::path props = a.proposals.empty() ? fs::path(a.data) / "proposals.jsonl" : fs::path(a.proposals);
    const data::Dataset ds = data::load_annotations(ann);
    const auto proposals = data::load_proposals(props, &ds);
    if (ds.images.empty())
        throw EmptyDataset("no images in " + ann.string());
    const std::size_t index = a.image_id.empty() ? 0 : ds.find(a.image_id);
    if (index == std::string::npos)
        throw ConfigError("image id '" + a.image_id + "' is not in " + ann.string());

    // The previewed image plus the next one as de-positioning background.
    std::vector<trainer::Sample> batch;
    for (std::size_t i : {index, (index + 1) % ds.images.size()})
    {
        const auto& rec = ds.images[i];
        const auto it = proposals.find(rec.id);
        if (it == proposals.end())
            throw DataError("no proposals for image " + rec.id);
        batch.push_back({rec.id, ds.load_image(i), it->second});
        m.inputs.push_back(ds.root / rec.file);
        if (ds.images.size() == 1)
            break;
    }
    m.inputs.push_back(ann);
    m.inputs.push_back(props);

    const trainer::PreparedSample p = trainer::prepare_sample(batch, 0, 0, cfg);
    if (p.skipped)
        throw NoSurvivingProposals("image " + batch[0].id + ": " + p.skip_reason);

    const fs::path dir = a.out;
    fs::create_directories(dir);
    const int S = cfg.aug.view_size;
    std::vector<std::pair<std::string, Tensor>> images = {
        {"x1.png", p.views.x1},
        {"x1_hat.png", p.x1_hat},
        {"x2.png", p.views.x2},
        {"x2s_hat.png", p.x2s_hat},
    };
    if (cfg.depositioning)
    {
        images.emplace_back("xb.png", p.xb);
        images.emplace_back("x3.png", p.x3);
        images.emplace_back("m.png", image::mask_to_image(p.m));
        images.emplace_back("m_hat.png", image::mask_to_image(p.m_hat));
    }
    for (const auto& [name, img] : images)
    {
        image::save_png(img, dir / name);
        m.outputs.push_back(dir / name);
    }
    std::vector<Tensor> before{p.views.x1, p.views.x2};
    std::vector<Tensor> after{p.x1_hat, image::resize(p.x2s_hat, S, S)};
    if (cfg.depositioning)
        after.push_back(p.x3);
    image::save_png(hstack(before, 4), dir / "before.png");
    image::save_png(hstack(after, 4), dir / "after.png");
    m.outputs.push_back(dir / "before.png");
    m.outputs.push_back(dir / "after.png");

    json j;
    j["image_id"] = batch[0].id;
    j["crop"] = box_json(p.views.crop);
    auto boxes = [](const std::vector<geometry::BBox>& v) {
        json arr = json::array();
        for (const auto& b : v)
            arr.push_back(box_json(b));
        return arr;
    };
    j["boxes_x1"] = boxes(p.views.boxes_v1);
    j["boxes_x2"] = boxes(p.views.boxes_v2);
    j["boxes_x2s"] = boxes(p.views.boxes_v2s);
    auto cutouts = [&](const std::vector<augment::CutoutRecord>& v) {
        json arr = json::array();
        for (const auto& c : v)
            arr.push_back({{"proposal", c.proposal},
                           {"rect", box_json(c.rect)},
                           {"area_fraction", c.area_fraction},
                           {"restored", boxes(c.restored)}});
        return arr;
    };
    auto masks = [&](const std::vector<augment::PrmRecord>& v) {
        json arr = json::array();
        for (const auto& r : v)
            arr.push_back({{"proposal", r.proposal},
                           {"direction", augment::to_string(r.direction)},
                           {"rect", box_json(r.rect)},
                           {"replaced", box_json(r.replaced)},
                           {"shift", r.shift}});
        return arr;
    };
    j["cutouts_x1"] = cutouts(p.cutouts_x1);
    j["cutouts_x2s"] = cutouts(p.cutouts_x2s);
    j["prm_x1"] = masks(p.masks_x1);
    j["prm_x2s"] = masks(p.masks_x2s);
    if (cfg.depositioning)
    {
        j["shift"] = {{"tx", p.shift.tx}, {"ty", p.shift.ty}};
        j["background"] = p.background;
        j["boxes_x3"] = boxes(p.box_v3);
    }
    write_text(dir / "preview.json", j.dump(2) + "\n");
    m.outputs.push_back(dir / "preview.json");

    m.config = trainer::options(cfg);
    m.seed = cfg.seed;
    m.write(dir / "manifest.json");
    out << "preview of " << batch[0].id << " written to " << dir.string() << "\n";
    return 0;
}

// --- synth -------------------------------------------------------------------

struct SynthArgs
{
    Common common;
    std::string out;
};

int run_synth(const SynthArgs& a, std::ostream& out)
{
    const data::SceneSpec scene;
    const data::ProposalSpec prop;
    Settings s({{"count", "100"},
                {"size", std::to_string(scene.width)},
                {"min_objects", std::to_string(scene.min_objects)},
                {"max_objects", std::to_string(scene.max_objects)},
                {"min_size", std::to_string(scene.min_size)},
                {"max_size", std::to_string(scene.max_size)},
                {"gt_copies", std::to_string(prop.gt_copies)},
                {"jitter", config::format_double(prop.jitter)},
                {"seed", "0"},
                {"deterministic", "false"}});
    Manifest m;
    m.subcommand = "synth";
    if (auto f = resolve(a.common, [&](const std::string& k, const std::string& v) { s.set(k, v); }))
        m.inputs.push_back(*f);

    data::SceneSpec spec;
    spec.width = spec.height = s.get_int("size");
    spec.min_objects = s.get_int("min_objects");
    spec.max_objects = s.get_int("max_objects");
    spec.min_size = s.get_int("min_size");
    spec.max_size = s.get_int("max_size");
    data::ProposalSpec ps;
    ps.gt_copies = s.get_int("gt_copies");
    ps.jitter = config::parse_double("jitter", s.get("jitter"));
    const int count = s.get_int("count");
    if (count < 1)
        throw ConfigError("option 'count' must be positive");
    const std::uint64_t seed = parse_seed(s.get("seed"));
    s.get_bool("deterministic");

    const fs::path dir = a.out;
    const data::Dataset ds = data::write_synthetic_dataset(dir, count, spec, ps, seed);
    m.outputs = {dir / "annotations.jsonl", dir / "proposals.jsonl", dir / "images"};
    m.config = s.values();
    m.seed = seed;
    m.write(dir / "manifest.json");
    std::size_t objects = 0;
    for (const auto& im : ds.images)
        objects += im.objects.size();
    out << "wrote " << ds.images.size() << " images with " << objects << " objects to " << dir.string() << "\n";
    return 0;
}

} // namespace

std::vector<std::string> subcommands()
{
    return {"pretrain", "probe-coupling", "probe-position", "oknn", "subset", "augment-preview", "synth"};
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Dense self-supervised pretraining laboratory on synthetic multi-object scenes", "d3ssl"};
    app.require_subcommand(1);
    app.fallthrough(false);

    const KeyValues train_defaults = trainer::options(trainer::TrainConfig{});

    PretrainArgs pre;
    auto* pretrain = app.add_subcommand("pretrain", "train the toy encoder with region-level contrastive losses");
    add_common(pretrain, pre.common);
    pretrain->add_option("--data", pre.data, "dataset directory with annotations.jsonl")->required()->type_name("DIR");
    pretrain->add_option("--proposals", pre.proposals, "proposal JSONL (default DIR/proposals.jsonl)")
        ->type_name("FILE");
    pretrain->add_option("--out", pre.out, "output directory")->required()->type_name("DIR");
    pretrain->add_option("--resume", pre.resume, "continue from a checkpoint")->type_name("CKPT");
    add_setting_flags(pretrain, pre.common, train_defaults, {"deterministic"});

    ProbeArgs pc, pp;
    auto* coupling = app.add_subcommand("probe-coupling", "per-stage coupling rate on synthetic object pairs");
    auto* position = app.add_subcommand("probe-position", "per-stage 3x3-grid mean cosine similarity");
    for (auto [sub, args] : {std::pair{coupling, &pc}, std::pair{position, &pp}})
    {
        add_common(sub, args->common);
        sub->add_option("--checkpoint", args->checkpoint, "checkpoint to probe")->required()->type_name("CKPT");
        sub->add_option("--out", args->out, "report JSON")->required()->type_name("FILE");
        sub->add_option("--plot", args->plot, "per-stage line chart (PNG)")->type_name("FILE");
        add_setting_flags(sub, args->common, probe_defaults(), {"deterministic"});
    }

    OknnArgs ok;
    auto* oknn_cmd = app.add_subcommand("oknn", "object-level kNN accuracy from ground-truth boxes");
    add_common(oknn_cmd, ok.common);
    oknn_cmd->add_option("--checkpoint", ok.checkpoint, "checkpoint to evaluate")->required()->type_name("CKPT");
    oknn_cmd->add_option("--train-ann", ok.train_ann, "annotations of the bank images")->required()->type_name("FILE");
    oknn_cmd->add_option("--eval-ann", ok.eval_ann, "annotations of the query images")->required()->type_name("FILE");
    oknn_cmd->add_option("--out", ok.out, "results JSON")->required()->type_name("FILE");
    oknn_cmd->add_flag("--disturbed", ok.disturbed, "replace query backgrounds with other images");
    add_setting_flags(oknn_cmd, ok.common,
                      {{"k", "20"}, {"n", "4"}, {"weights", "student"}, {"workers", "1"}, {"seed", "0"}}, {});

    SubsetArgs sa;
    auto* subset = app.add_subcommand("subset", "select source images under reference class caps");
    add_common(subset, sa.common);
    subset->add_option("--source", sa.source, "source annotations")->required()->type_name("FILE");
    subset->add_option("--reference", sa.reference, "reference annotations")->required()->type_name("FILE");
    subset->add_option("--out", sa.out, "selected ids, one per line")->required()->type_name("FILE");
    subset->add_option("--report", sa.report, "per-class counts JSON")->type_name("FILE");
    add_setting_flags(subset, sa.common, {{"seed", "0"}}, {});

    PreviewArgs pv;
    auto* preview = app.add_subcommand("augment-preview", "write the augmented views of one training image");
    add_common(preview, pv.common);
    preview->add_option("--data", pv.data, "dataset directory with annotations.jsonl")->required()->type_name("DIR");
    preview->add_option("--proposals", pv.proposals, "proposal JSONL (default DIR/proposals.jsonl)")
        ->type_name("FILE");
    preview->add_option("--image-id", pv.image_id, "image to preview (default: the first)")->type_name("ID");
    preview->add_option("--out", pv.out, "output directory")->required()->type_name("DIR");
    add_setting_flags(preview, pv.common, train_defaults, {"deterministic"});

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "write a synthetic multi-object dataset");
    add_common(synth, sy.common);
    synth->add_option("--out", sy.out, "output directory")->required()->type_name("DIR");
    add_setting_flags(synth, sy.common,
                      {{"count", "100"},
                       {"size", "64"},
                       {"min_objects", "1"},
                       {"max_objects", "4"},
                       {"min_size", "12"},
                       {"max_size", "28"},
                       {"gt_copies", std::to_string(data::ProposalSpec{}.gt_copies)},
                       {"jitter", config::format_double(data::ProposalSpec{}.jitter)},
                       {"seed", "0"}},
                      {});

    if (!args.empty() && !args[0].starts_with("-"))
    {
        const auto names = subcommands();
        if (std::find(names.begin(), names.end(), args[0]) == names.end())
        {
            err << "d3ssl: unknown command '" << args[0] << "'\n" << app.help();
            return 1;
        }
        // Name unknown flags before CLI11 reports missing required ones.
        const CLI::App* sub = app.get_subcommand(args[0]);
        for (std::size_t i = 1; i < args.size(); ++i)
        {
            const std::string& arg = args[i];
            if (!arg.starts_with("-") || arg == "-" || arg == "--")
                continue;
            char* end = nullptr;
            std::strtod(arg.c_str(), &end);
            if (end && *end == '\0')
                continue;
            const std::string name = arg.substr(0, arg.find('='));
            if (!sub->get_option_no_throw(name))
            {
                err << "d3ssl " << args[0] << ": unknown flag '" << name << "'\n";
                return 1;
            }
        }
    }

    try
    {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = e.get_exit_code();
        if (code == 0)
        {
            app.exit(e, out, err);
            return 0;
        }
        err << "d3ssl: " << e.what() << "\n";
        if (dynamic_cast<const CLI::RequiredError*>(&e) && app.get_subcommands().empty())
            err << app.help();
        return 1;
    }

    try
    {
        if (pretrain->parsed())
            return run_pretrain(pre, out);
        if (coupling->parsed())
            return run_probe(pc, diagnostics::Probe::Coupling, out);
        if (position->parsed())
            return run_probe(pp, diagnostics::Probe::Position, out);
        if (oknn_cmd->parsed())
            return run_oknn(ok, out);
        if (subset->parsed())
            return run_subset(sa, out);
        if (preview->parsed())
            return run_preview(pv, out);
        if (synth->parsed())
            return run_synth(sy, out);
        throw UnknownCommand("no subcommand given");
    }
    catch (const ValidationError& e)
    {
        err << "d3ssl: " << e.what() << "\n";
        return 1;
    }
    catch (const std::exception& e)
    {
        err << "d3ssl: " << e.what() << "\n";
        return 2;
    }
}

} // namespace d3ssl::cli
