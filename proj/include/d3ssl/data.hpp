#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "d3ssl/geometry.hpp"
#include "d3ssl/rng.hpp"
#include "d3ssl/tensor.hpp"

namespace d3ssl::data {

using geometry::BBox;

struct Object
{
    BBox box;
    int class_id = 0;

    friend bool operator==(const Object&, const Object&) = default;
};

// --- synthetic scenes --------------------------------------------------------

enum class Shape
{
    Rectangle,
    Ellipse,
    Triangle,
    Cross,
    Diamond,
    Ring,
};

enum class Texture
{
    Solid,
    Stripes,
    Checker,
};

struct ClassStyle
{
    std::string name;
    Shape shape = Shape::Rectangle;
    std::array<float, 3> color{1.0f, 1.0f, 1.0f};
    Texture texture = Texture::Solid;
};

// The default eight-class palette.
std::vector<ClassStyle> default_palette();

struct SceneSpec
{
    int width = 64;
    int height = 64;
    int min_objects = 1;
    int max_objects = 4;
    int min_size = 12;  // object side range in pixels
    int max_size = 28;
    std::vector<ClassStyle> classes = default_palette();
    std::vector<double> class_weights; // empty means uniform
    float background_max = 0.35f;      // background channel values lie below this
    float noise = 0.04f;               // per-pixel noise amplitude

    // Throws SpecError.
    void validate() const;
};

struct AnnotatedImage
{
    std::string id;
    Tensor image;
    std::vector<Object> objects;
    // Per-pixel index into `objects`, -1 for background.
    std::vector<int> instance;
};

// Non-overlapping objects (edges may touch) with tight boxes.
AnnotatedImage synth_scene(Rng& rng, const SceneSpec& spec);

// One object filling a w x h crop on a black background.
Tensor render_object(const ClassStyle& style, int w, int h, Rng& rng, float noise);

// --- proposal stub -----------------------------------------------------------

struct GridLevel
{
    int size = 32;
    int stride = 32;
};

struct ProposalSpec
{
    std::vector<GridLevel> grid{{32, 16}, {48, 16}};
    int gt_copies = 2;      // jittered copies of each ground-truth box
    double jitter = 0.15;   // max shift/resize as a fraction of the box side
};

// Sliding-window boxes at every grid level, then jittered ground-truth
// copies clipped to the image. All boxes are valid and in bounds.
std::vector<BBox> grid_proposals(int width, int height, const ProposalSpec& spec, std::span<const Object> gt,
                                 Rng& rng);

// --- datasets on disk --------------------------------------------------------

struct Category
{
    int id = 0;
    std::string name;

    friend bool operator==(const Category&, const Category&) = default;
};

struct ImageRecord
{
    std::string id;
    std::string file; // relative to Dataset::root
    int width = 0;
    int height = 0;
    std::vector<Object> objects;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Dataset
{
    std::filesystem::path root;
    std::vector<Category> categories;
    std::vector<ImageRecord> images;

    std::size_t find(const std::string& image_id) const; // npos when absent
    // Category name for an id, "#<id>" when the id is not declared.
    std::string class_key(int category_id) const;
    Tensor load_image(std::size_t index) const; // throws MissingImage
};

using ProposalIndex = std::map<std::string, std::vector<BBox>>;

// JSONL, one record per line:
//   {"category": {"id": 0, "name": "..."}}
//   {"image": {"id": "...", "file": "...", "width": W, "height": H}}
//   {"annotation": {"image_id": "...", "bbox": [x1, y1, x2, y2], "category_id": c}}
// Throws ParseError naming the line, or MissingImage when `check_files` is
// set and a listed image file does not exist under the file's directory.
Dataset load_annotations(const std::filesystem::path& path, bool check_files = true);
void save_annotations(const Dataset& ds, const std::filesystem::path& path);

// JSONL {"image_id": "...", "boxes": [[x1, y1, x2, y2], ...]}. When a dataset
// is given, image ids must resolve and boxes must lie within the image.
ProposalIndex load_proposals(const std::filesystem::path& path, const Dataset* dataset = nullptr);
void save_proposals(const ProposalIndex& proposals, const std::filesystem::path& path);

// Writes `count` scenes as PNGs plus annotations.jsonl and proposals.jsonl.
Dataset write_synthetic_dataset(const std::filesystem::path& dir, int count, const SceneSpec& scene,
                                const ProposalSpec& proposals, std::uint64_t seed);

// --- subset selection --------------------------------------------------------

struct ClassCount
{
    long reference = 0; // cap: objects of this class in the reference set
    long source = 0;
    long selected = 0;
};

struct SubsetResult
{
    std::vector<std::string> image_ids; // in acceptance order
    std::map<std::string, ClassCount> counts;
};

// Greedy scan over source images in a seeded random order. An image is
// accepted iff it has an object of a reference class and accepting it
// keeps every shared class within its reference count. Classes are matched
// by category name. Throws EmptySource.
SubsetResult mini_subset_select(const Dataset& source, const Dataset& reference, std::uint64_t seed);

} // namespace d3ssl::data
