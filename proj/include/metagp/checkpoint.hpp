#pragma once

#include <memory>
#include <string>
#include <vector>

#include "metagp/baselines.hpp"
#include "metagp/dataset.hpp"

namespace metagp::ckpt {

// Normalization stats for one task, embedded so a checkpoint carries
// everything inference needs.
struct NormEntry {
  std::string region_id;
  std::string attribute_id;
  data::NormRecord record;
};

// Self-describing model container. `kind` selects which parameter block is
// meaningful; the others stay default-constructed.
struct Checkpoint {
  std::string kind;  // ours | gpr | np | nn | ft
  gp::ModelParams ours;
  bl::GprParams gpr;
  bl::NpParams np;
  bl::NnParams nn;  // shared by nn and ft
  int ft_epochs = 100;
  double ft_lr = 1e-3;
  std::vector<NormEntry> norm_records;
};

// Captures the model's current parameters under its kind() tag. Normalization
// records are the caller's to attach.
Checkpoint snapshot(const EpisodicModel& model);

// Versioned JSON container; doubles round-trip exactly (shortest-repr
// serialization), so save/load is bitwise faithful.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Instantiates the model a checkpoint describes.
std::unique_ptr<EpisodicModel> make_model(const Checkpoint& checkpoint);

// The embedded record for one task; ConfigError when absent.
const data::NormRecord& find_record(const Checkpoint& checkpoint, const std::string& region_id,
                                    const std::string& attribute_id);

}  // namespace metagp::ckpt
