#include "d3ssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

#include "d3ssl/error.hpp"
#include "d3ssl/image.hpp"

namespace d3ssl::data {

using nlohmann::json;

std::vector<ClassStyle> default_palette()
{
    return {
        {"red-square", Shape::Rectangle, {0.90f, 0.15f, 0.15f}, Texture::Solid},
        {"green-disc", Shape::Ellipse, {0.20f, 0.85f, 0.25f}, Texture::Solid},
        {"blue-triangle", Shape::Triangle, {0.25f, 0.35f, 0.95f}, Texture::Solid},
        {"yellow-cross", Shape::Cross, {0.95f, 0.90f, 0.20f}, Texture::Solid},
        {"magenta-striped-square", Shape::Rectangle, {0.90f, 0.25f, 0.85f}, Texture::Stripes},
        {"cyan-checkered-disc", Shape::Ellipse, {0.20f, 0.90f, 0.90f}, Texture::Checker},
        {"orange-diamond", Shape::Diamond, {0.98f, 0.55f, 0.10f}, Texture::Solid},
        {"white-ring", Shape::Ring, {0.95f, 0.95f, 0.95f}, Texture::Solid},
    };
}

void SceneSpec::validate() const
{
    if (width <= 0 || height <= 0)
        throw SpecError("canvas must have positive size");
    if (min_objects < 1 || max_objects < min_objects)
        throw SpecError("object count range must satisfy 1 <= min <= max");
    if (min_size < 4 || max_size < min_size || max_size > std::min(width, height))
        throw SpecError("object size range must satisfy 4 <= min <= max <= canvas side");
    if (classes.empty())
        throw SpecError("scene needs at least one class");
    if (!class_weights.empty())
    {
        if (class_weights.size() != classes.size())
            throw SpecError("class_weights must match the class list");
        double total = 0.0;
        for (double w : class_weights)
        {
            if (!(w >= 0.0))
                throw SpecError("class weights must be non-negative");
            total += w;
        }
        if (!(total > 0.0))
            throw SpecError("class weights must not all be zero");
    }
    if (background_max < 0.0f || background_max > 1.0f || noise < 0.0f)
        throw SpecError("background_max must lie in [0,1] and noise must be non-negative");
}

namespace {

bool shape_covers(Shape shape, double u, double v)
{
    const double cu = 2.0 * u - 1.0;
    const double cv = 2.0 * v - 1.0;
    switch (shape)
    {
    case Shape::Rectangle: return true;
    case Shape::Ellipse: return cu * cu + cv * cv <= 1.0;
    case Shape::Triangle: return std::abs(cu) <= v;
    case Shape::Cross: return std::abs(cu) <= 0.34 || std::abs(cv) <= 0.34;
    case Shape::Diamond: return std::abs(cu) + std::abs(cv) <= 1.0;
    case Shape::Ring:
    {
        const double r2 = cu * cu + cv * cv;
        return r2 <= 1.0 && r2 >= 0.35;
    }
    }
    return false;
}

float texture_factor(Texture t, int lx, int ly)
{
    switch (t)
    {
    case Texture::Solid: return 1.0f;
    case Texture::Stripes: return (lx / 3) % 2 ? 0.55f : 1.0f;
    case Texture::Checker: return (lx / 3 + ly / 3) % 2 ? 0.55f : 1.0f;
    }
    return 1.0f;
}

struct Placement
{
    int x, y, w, h;
};

bool interiors_overlap(const Placement& a, const Placement& b)
{
    return a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h;
}

} // namespace

AnnotatedImage synth_scene(Rng& rng, const SceneSpec& spec)
{
    spec.validate();
    const int W = spec.width;
    const int H = spec.height;
    std::vector<double> weights = spec.class_weights;
    if (weights.empty())
        weights.assign(spec.classes.size(), 1.0);
    std::discrete_distribution<int> pick_class(weights.begin(), weights.end());

    for (int restart = 0; restart < 50; ++restart)
    {
        const int wanted = uniform_int(rng, spec.min_objects, spec.max_objects);
        std::vector<Placement> placed;
        for (int attempt = 0; attempt < 400 && static_cast<int>(placed.size()) < wanted; ++attempt)
        {
            Placement p;
            p.w = uniform_int(rng, spec.min_size, spec.max_size);
            p.h = uniform_int(rng, spec.min_size, spec.max_size);
            p.x = uniform_int(rng, 0, W - p.w);
            p.y = uniform_int(rng, 0, H - p.h);
            if (std::none_of(placed.begin(), placed.end(), [&](const Placement& q) { return interiors_overlap(p, q); }))
                placed.push_back(p);
        }
        if (static_cast<int>(placed.size()) < spec.min_objects)
            continue;

        AnnotatedImage scene;
        scene.id = "scene";
        scene.image = Tensor(3, H, W);
        scene.instance.assign(static_cast<std::size_t>(W) * H, -1);
        std::array<float, 3> bg;
        for (auto& c : bg)
            c = static_cast<float>(uniform(rng, 0.02, spec.background_max));
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    scene.image.at(c, y, x) =
                        std::clamp(bg[c] + static_cast<float>(uniform(rng, -spec.noise, spec.noise)), 0.0f, 1.0f);

        for (const Placement& p : placed)
        {
            const int cls = pick_class(rng);
            const ClassStyle& style = spec.classes[static_cast<std::size_t>(cls)];
            const int index = static_cast<int>(scene.objects.size());
            int x1 = W, y1 = H, x2 = -1, y2 = -1;
            for (int y = p.y; y < p.y + p.h; ++y)
                for (int x = p.x; x < p.x + p.w; ++x)
                {
                    const double u = (x - p.x + 0.5) / p.w;
                    const double v = (y - p.y + 0.5) / p.h;
                    if (!shape_covers(style.shape, u, v))
                        continue;
                    const float f = texture_factor(style.texture, x - p.x, y - p.y);
                    for (int c = 0; c < 3; ++c)
                        scene.image.at(c, y, x) = std::clamp(
                            style.color[c] * f + static_cast<float>(uniform(rng, -spec.noise, spec.noise)), 0.0f,
                            1.0f);
                    scene.instance[static_cast<std::size_t>(y) * W + x] = index;
                    x1 = std::min(x1, x);
                    y1 = std::min(y1, y);
                    x2 = std::max(x2, x);
                    y2 = std::max(y2, y);
                }
            if (x2 < 0)
                continue;
            scene.objects.push_back({BBox{double(x1), double(y1), double(x2 + 1), double(y2 + 1)}, cls});
        }
        if (static_cast<int>(scene.objects.size()) >= spec.min_objects)
            return scene;
    }
    throw SpecError("could not place " + std::to_string(spec.min_objects) + " objects on a " + std::to_string(W) +
                    "x" + std::to_string(H) + " canvas");
}

Tensor render_object(const ClassStyle& style, int w, int h, Rng& rng, float noise)
{
    if (w <= 0 || h <= 0)
        throw SpecError("object crop must have positive size");
    Tensor out(3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
        {
            if (!shape_covers(style.shape, (x + 0.5) / w, (y + 0.5) / h))
                continue;
            const float f = texture_factor(style.texture, x, y);
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) =
                    std::clamp(style.color[c] * f + static_cast<float>(uniform(rng, -noise, noise)), 0.0f, 1.0f);
        }
    return out;
}

std::vector<BBox> grid_proposals(int width, int height, const ProposalSpec& spec, std::span<const Object> gt,
                                 Rng& rng)
{
    std::vector<BBox> boxes;
    for (const GridLevel& level : spec.grid)
    {
        if (level.size <= 0 || level.stride <= 0)
            throw ConfigError("grid levels need positive size and stride");
        for (int y = 0; y + level.size <= height; y += level.stride)
            for (int x = 0; x + level.size <= width; x += level.stride)
                boxes.push_back({double(x), double(y), double(x + level.size), double(y + level.size)});
    }
    const BBox frame{0.0, 0.0, double(width), double(height)};
    for (const Object& o : gt)
        for (int k = 0; k < spec.gt_copies; ++k)
        {
            if (spec.jitter == 0.0)
            {
                boxes.push_back(o.box);
                continue;
            }
            const double w = o.box.width() * (1.0 + uniform(rng, -spec.jitter, spec.jitter));
            const double h = o.box.height() * (1.0 + uniform(rng, -spec.jitter, spec.jitter));
            const double cx = o.box.center_x() + o.box.width() * uniform(rng, -spec.jitter, spec.jitter);
            const double cy = o.box.center_y() + o.box.height() * uniform(rng, -spec.jitter, spec.jitter);
            const auto clipped = geometry::intersect(BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, frame);
            if (clipped && clipped->width() >= 1.0 && clipped->height() >= 1.0)
                boxes.push_back(*clipped);
        }
    return boxes;
}

// --- datasets ------------------------------------------------------------------

std::size_t Dataset::find(const std::string& image_id) const
{
    for (std::size_t i = 0; i < images.size(); ++i)
        if (images[i].id == image_id)
            return i;
    return std::string::npos;
}

std::string Dataset::class_key(int category_id) const
{
    for (const auto& c : categories)
        if (c.id == category_id)
            return c.name;
    return "#" + std::to_string(category_id);
}

Tensor Dataset::load_image(std::size_t index) const
{
    const ImageRecord& rec = images.at(index);
    Tensor img = image::load_png(root / rec.file);
    if (img.width() != rec.width || img.height() != rec.height)
        throw DataError("image " + rec.id + " is " + img.shape_string() + ", annotation says " +
                        std::to_string(rec.width) + "x" + std::to_string(rec.height));
    return img;
}

namespace {

template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text))
    {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        json record;
        try
        {
            record = json::parse(text);
        }
        catch (const json::parse_error& e)
        {
            throw ParseError(line, std::string("invalid JSON: ") + e.what());
        }
        if (!record.is_object())
            throw ParseError(line, "record must be a JSON object");
        try
        {
            fn(record, line);
        }
        catch (const json::exception& e)
        {
            throw ParseError(line, e.what());
        }
    }
}

BBox parse_box(const json& j, std::size_t line)
{
    if (!j.is_array() || j.size() != 4)
        throw ParseError(line, "box must be [x1, y1, x2, y2]");
    for (const auto& v : j)
        if (!v.is_number())
            throw ParseError(line, "box coordinates must be numbers");
    const BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (!(b.x1 < b.x2) || !(b.y1 < b.y2))
        throw ParseError(line, "box " + b.to_string() + " needs x1 < x2 and y1 < y2");
    return b;
}

void check_in_image(const BBox& b, const ImageRecord& rec, std::size_t line)
{
    if (!b.inside(rec.width, rec.height))
        throw ParseError(line, "box " + b.to_string() + " exceeds image " + rec.id);
}

json box_json(const BBox& b)
{
    return json::array({b.x1, b.y1, b.x2, b.y2});
}

std::ofstream open_for_write(const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path.string());
    return out;
}

} // namespace

Dataset load_annotations(const std::filesystem::path& path, bool check_files)
{
    Dataset ds;
    ds.root = path.parent_path();
    struct Pending
    {
        std::string image_id;
        Object object;
        std::size_t line;
    };
    std::vector<Pending> pending;
    std::set<int> category_ids;

    for_each_record(path, [&](const json& r, std::size_t line) {
        if (r.size() != 1)
            throw ParseError(line, "record must have exactly one of category, image, annotation");
        if (r.contains("category"))
        {
            const json& c = r.at("category");
            Category cat{c.at("id").get<int>(), c.at("name").get<std::string>()};
            if (!category_ids.insert(cat.id).second)
                throw ParseError(line, "duplicate category id " + std::to_string(cat.id));
            ds.categories.push_back(std::move(cat));
        }
        else if (r.contains("image"))
        {
            const json& i = r.at("image");
            ImageRecord rec;
            rec.id = i.at("id").get<std::string>();
            rec.file = i.at("file").get<std::string>();
            rec.width = i.at("width").get<int>();
            rec.height = i.at("height").get<int>();
            if (rec.width <= 0 || rec.height <= 0)
                throw ParseError(line, "image size must be positive");
            if (ds.find(rec.id) != std::string::npos)
                throw ParseError(line, "duplicate image id " + rec.id);
            if (check_files && !std::filesystem::exists(ds.root / rec.file))
                throw MissingImage("line " + std::to_string(line) + ": " + (ds.root / rec.file).string());
            ds.images.push_back(std::move(rec));
        }
        else if (r.contains("annotation"))
        {
            const json& a = r.at("annotation");
            pending.push_back(
                {a.at("image_id").get<std::string>(), {parse_box(a.at("bbox"), line), a.at("category_id").get<int>()},
                 line});
        }
        else
            throw ParseError(line, "unknown record type");
    });

    for (const Pending& p : pending)
    {
        const std::size_t idx = ds.find(p.image_id);
        if (idx == std::string::npos)
            throw ParseError(p.line, "annotation for unknown image " + p.image_id);
        check_in_image(p.object.box, ds.images[idx], p.line);
        ds.images[idx].objects.push_back(p.object);
    }
    return ds;
}

void save_annotations(const Dataset& ds, const std::filesystem::path& path)
{
    std::ofstream out = open_for_write(path);
    for (const auto& c : ds.categories)
        out << json{{"category", {{"id", c.id}, {"name", c.name}}}}.dump() << '\n';
    for (const auto& i : ds.images)
        out << json{{"image", {{"id", i.id}, {"file", i.file}, {"width", i.width}, {"height", i.height}}}}.dump()
            << '\n';
    for (const auto& i : ds.images)
        for (const auto& o : i.objects)
            out << json{{"annotation", {{"image_id", i.id}, {"bbox", box_json(o.box)}, {"category_id", o.class_id}}}}
                       .dump()
                << '\n';
}

ProposalIndex load_proposals(const std::filesystem::path& path, const Dataset* dataset)
{
    ProposalIndex index;
    for_each_record(path, [&](const json& r, std::size_t line) {
        const std::string id = r.at("image_id").get<std::string>();
        const json& boxes = r.at("boxes");
        if (!boxes.is_array())
            throw ParseError(line, "boxes must be an array");
        if (index.count(id))
            throw ParseError(line, "duplicate proposal record for " + id);
        const ImageRecord* rec = nullptr;
        if (dataset)
        {
            const std::size_t idx = dataset->find(id);
            if (idx == std::string::npos)
                throw ParseError(line, "proposals for unknown image " + id);
            rec = &dataset->images[idx];
        }
        std::vector<BBox> parsed;
        for (const auto& b : boxes)
        {
            parsed.push_back(parse_box(b, line));
            if (rec)
                check_in_image(parsed.back(), *rec, line);
        }
        index.emplace(id, std::move(parsed));
    });
    return index;
}

void save_proposals(const ProposalIndex& proposals, const std::filesystem::path& path)
{
    std::ofstream out = open_for_write(path);
    for (const auto& [id, boxes] : proposals)
    {
        json arr = json::array();
        for (const auto& b : boxes)
            arr.push_back(box_json(b));
        out << json{{"image_id", id}, {"boxes", arr}}.dump() << '\n';
    }
}

Dataset write_synthetic_dataset(const std::filesystem::path& dir, int count, const SceneSpec& scene,
                                const ProposalSpec& proposals, std::uint64_t seed)
{
    std::filesystem::create_directories(dir / "images");
    Dataset ds;
    ds.root = dir;
    for (std::size_t c = 0; c < scene.classes.size(); ++c)
        ds.categories.push_back({static_cast<int>(c), scene.classes[c].name});
    ProposalIndex index;
    for (int i = 0; i < count; ++i)
    {
        Rng rng = derive_rng(seed, {static_cast<std::uint64_t>(i)});
        AnnotatedImage img = synth_scene(rng, scene);
        char name[32];
        std::snprintf(name, sizeof name, "img_%05d", i);
        ImageRecord rec{name, std::string("images/") + name + ".png", scene.width, scene.height, img.objects};
        image::save_png(img.image, dir / rec.file);
        index[rec.id] = grid_proposals(scene.width, scene.height, proposals, img.objects, rng);
        ds.images.push_back(std::move(rec));
    }
    save_annotations(ds, dir / "annotations.jsonl");
    save_proposals(index, dir / "proposals.jsonl");
    return ds;
}

SubsetResult mini_subset_select(const Dataset& source, const Dataset& reference, std::uint64_t seed)
{
    if (source.images.empty())
        throw EmptySource("source annotation set has no images");

    SubsetResult result;
    for (const auto& img : reference.images)
        for (const auto& o : img.objects)
            ++result.counts[reference.class_key(o.class_id)].reference;
    for (const auto& img : source.images)
        for (const auto& o : img.objects)
            ++result.counts[source.class_key(o.class_id)].source;

    std::vector<std::size_t> order(source.images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    for (const std::size_t idx : order)
    {
        const ImageRecord& img = source.images[idx];
        std::map<std::string, long> here;
        for (const auto& o : img.objects)
            ++here[source.class_key(o.class_id)];

        bool has_reference_class = false;
        bool within_caps = true;
        for (const auto& [key, n] : here)
        {
            const ClassCount& c = result.counts[key];
            if (c.reference == 0)
                continue;
            has_reference_class = true;
            within_caps &= c.selected + n <= c.reference;
        }
        if (!has_reference_class || !within_caps)
            continue;
        for (const auto& [key, n] : here)
            result.counts[key].selected += n;
        result.image_ids.push_back(img.id);
    }
    return result;
}

} // namespace d3ssl::data
