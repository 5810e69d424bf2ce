#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d3ssl/augment.hpp"
#include "d3ssl/config.hpp"
#include "d3ssl/data.hpp"
#include "d3ssl/encoder.hpp"
#include "d3ssl/loss.hpp"

namespace d3ssl::trainer {

using geometry::BBox;

enum class LrSchedule
{
    Cosine,
    Constant,
};

struct TrainConfig
{
    int epochs = 20;
    int batch_size = 8;
    double base_lr = 0.03;
    LrSchedule schedule = LrSchedule::Cosine;
    double sgd_momentum = 0.9;
    double weight_decay = 1e-4;
    int proposals_per_image = 4; // K
    std::uint64_t seed = 0;
    double momentum_coefficient = 0.99;
    bool depositioning = true;   // false trains with L_dc only
    bool random_bank_init = true;
    int workers = 1;
    bool deterministic = false;  // forces a single worker
    int checkpoint_every = 0;    // epochs; 0 keeps only the final checkpoint
    augment::AugConfig aug;
    loss::LossConfig loss;
    encoder::EncoderConfig encoder;

    TrainConfig();

    // Throws ConfigError.
    void validate() const;
    int effective_workers() const { return deterministic ? 1 : workers; }
};

// Key-value view of TrainConfig used by config files and manifests.
// set_option throws ConfigError for unknown keys or malformed values.
void set_option(TrainConfig& cfg, const std::string& key, const std::string& value);
config::KeyValues options(const TrainConfig& cfg);
std::vector<std::string> option_keys();

double learning_rate(const TrainConfig& cfg, long step, long total_steps);

struct Sample
{
    std::string id;
    Tensor image;
    std::vector<BBox> proposals;
};

// Loads every dataset image with its proposal list. Throws DataError when
// an image has no proposal record.
std::vector<Sample> load_samples(const data::Dataset& ds, const data::ProposalIndex& proposals);

// Everything the step derives from one image before any network pass.
//
// Random draws come from derive_rng(seed, {step, index}) in this order:
//   make_views; shuffle of the surviving boxes (the first min(K, n) are
//   used, repeated cyclically up to K); PRC then PRM on x1; PRC then PRM on
//   x2s; per used box, RBJ of its x1 box, its x2s box and its x2 box; then,
//   with de-positioning, the shared shift, the PRC cut of the shifted mask,
//   and the background (another batch image, or uniform noise for a batch
//   of one).
struct PreparedSample
{
    bool skipped = false;
    std::string skip_reason;
    augment::ViewSet views;
    std::vector<int> used;          // kept-box indices of the distinct used boxes
    std::vector<int> slots;         // K entries indexing `used`
    Tensor x1_hat;                  // PRM o PRC (x1)
    Tensor x2s_hat;                 // PRM o PRC (x2s)
    std::vector<augment::CutoutRecord> cutouts_x1, cutouts_x2s;
    std::vector<augment::PrmRecord> masks_x1, masks_x2s;
    std::vector<BBox> box_v1;       // per used box: z_s1 and z_t1 on x1_hat
    std::vector<BBox> box_v2s;      // z_s2 on x2s_hat
    std::vector<BBox> box_v2;       // z_t2 on the raw x2
    // de-positioning
    geometry::Shift shift;
    geometry::Mask m, m_hat;
    int background = -1;            // batch index, -1 for noise
    Tensor xb;
    Tensor x3;
    std::vector<BBox> box_v3;       // b_hat = b + t on x3
};

PreparedSample prepare_sample(std::span<const Sample> batch, std::size_t index, long step, const TrainConfig& cfg);

struct TrainState
{
    encoder::EncoderPair pair;
    std::vector<float> velocity;
    loss::MemoryBank bank;
    long step = 0;
    int epoch = 0; // completed epochs
};

// Student from the seed, teacher a copy of it, zero velocity, and a bank
// filled with random unit vectors when random_bank_init is set.
TrainState initial_state(const encoder::Encoder& enc, const TrainConfig& cfg);

struct StepMetrics
{
    long step = 0;
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;     // batch mean of the per-image total loss
    double loss_dc = 0.0;  // batch mean of (1/K) sum of L_dc
    double loss_dp = 0.0;
    int images = 0;
    int skipped = 0;
    std::size_t bank_size = 0;
};

std::string to_json_line(const StepMetrics& m);

// One optimization step on θ_q, then the momentum update, then the bank
// update with this step's teacher features.
StepMetrics train_step(const encoder::Encoder& enc, TrainState& state, std::span<const Sample> batch,
                       const TrainConfig& cfg, long total_steps);

// --- checkpoints -------------------------------------------------------------

struct Checkpoint
{
    encoder::EncoderConfig encoder;
    config::KeyValues config;
    long step = 0;
    int epoch = 0;
    encoder::Parameters student;
    encoder::Parameters teacher;
    std::vector<float> velocity;
    std::size_t bank_capacity = 0;
    std::vector<Feature> bank;
};

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg);
TrainState restore_state(const Checkpoint& ckpt, const TrainConfig& cfg);
// Also writes a JSON manifest next to the archive (same stem, .json).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path); // throws DataError

struct RunOptions
{
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume;
    std::function<void(const StepMetrics&)> on_step;
    // Stop (with a checkpoint) once this many epochs are complete; the
    // schedule still spans cfg.epochs so a resumed run continues it.
    std::optional<int> stop_after_epoch;
};

// Trains for cfg.epochs, appending to out_dir/metrics.jsonl and writing
// out_dir/checkpoints/epoch_NNNN.ckpt. Returns the final checkpoint path.
// Throws ConfigError, DataError.
std::filesystem::path run_pretrain(const TrainConfig& cfg, std::span<const Sample> samples, const RunOptions& opts);

} // namespace d3ssl::trainer
