#pragma once

#include <memory>
#include <string>

#include "json.hpp"
#include "mtlface/model/model.hpp"

namespace mtlface::model {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary layout: "MTLFCKPT", u32 version, u64 manifest length, manifest JSON,
/// u32 entry count, then per entry: u32 name length, name, u32 ndim,
/// i64 dims[ndim], float32 data. Entries follow registration order.
std::string serialize_checkpoint(const MtlFace& model, const nlohmann::json& extra = {});
void save_checkpoint(const MtlFace& model, const std::string& path,
                     const nlohmann::json& extra = {});

struct LoadedCheckpoint {
  std::unique_ptr<MtlFace> model;
  nlohmann::json manifest;
};

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace mtlface::model
