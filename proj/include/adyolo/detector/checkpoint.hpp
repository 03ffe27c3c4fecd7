#pragma once

// Checkpoint file:
//   "ADCK", u32 header length, JSON header (detector config + model id),
//   u32 tensor count, then per tensor: u32 name length, name, tensor blob.

#include <string>

#include <json.hpp>

#include "adyolo/detector/detector.hpp"

namespace adyolo::detector {

nlohmann::json config_to_json(const DetectorConfig& config);
// Rejects unknown keys; missing keys keep their defaults.
DetectorConfig config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const DetectorModel& model);
DetectorModel load_checkpoint(const std::string& path);

}  // namespace adyolo::detector
