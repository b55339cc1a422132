#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "popmech/array.hpp"
#include "popmech/energy.hpp"

namespace popmech {

// Checkpoint container: an 8-byte little-endian header length, a UTF-8 JSON
// header, then the raw little-endian float64 tensor buffers concatenated in
// the header's declared order.
struct NamedTensor {
  std::string name;
  Array data;
};

void write_checkpoint(const std::string& path, nlohmann::json header,
                      const std::vector<NamedTensor>& tensors);

std::pair<nlohmann::json, std::vector<NamedTensor>> read_checkpoint(
    const std::string& path);

nlohmann::json energy_config_to_json(const energy::EnergyConfig& cfg);
energy::EnergyConfig energy_config_from_json(const nlohmann::json& j);

// header "kind": "energy_params". `extra` is merged into the header
// (provenance and the like).
void save_energy_params(const std::string& path,
                        const energy::EnergyConfig& cfg,
                        const energy::EnergyParams& params,
                        const nlohmann::json& extra = {});

struct LoadedEnergyParams {
  energy::EnergyConfig config;
  energy::EnergyParams params;
  nlohmann::json header;
};

LoadedEnergyParams load_energy_params(const std::string& path);

}  // namespace popmech
