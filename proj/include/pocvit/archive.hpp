#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pocvit/tensor.hpp"

namespace pocvit {

// Named-tensor archive: a JSON manifest (name, dtype, shape, byte offset)
// next to one little-endian binary blob. dtype "f32" is the interchange
// default; "f64" is used for training checkpoints so a resumed run continues
// bit-exactly.
struct ArchiveEntry {
  std::string name;
  std::string dtype;
  Shape shape;
  uint64_t offset = 0;
};

inline void save_archive(const std::string& base_path,
                         const std::vector<std::pair<std::string, Tensor>>& tensors,
                         const std::string& dtype = "f32") {
  if (dtype != "f32" && dtype != "f64")
    throw std::invalid_argument("save_archive: unsupported dtype " + dtype);
  nlohmann::json manifest;
  manifest["blob"] = base_path.substr(base_path.find_last_of('/') + 1) + ".bin";
  manifest["tensors"] = nlohmann::json::array();
  std::ofstream blob(base_path + ".bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write " + base_path + ".bin");
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::json e;
    e["name"] = name;
    e["dtype"] = dtype;
    e["shape"] = t.shape();
    e["offset"] = offset;
    manifest["tensors"].push_back(e);
    if (dtype == "f32") {
      std::vector<float> buf(t.data().begin(), t.data().end());
      blob.write(reinterpret_cast<const char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)));
      offset += buf.size() * sizeof(float);
    } else {
      blob.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
      offset += t.size() * sizeof(double);
    }
  }
  std::ofstream mf(base_path + ".json");
  if (!mf) throw std::runtime_error("cannot write " + base_path + ".json");
  mf << manifest.dump(2) << "\n";
}

inline std::map<std::string, Tensor> load_archive(const std::string& base_path) {
  std::ifstream mf(base_path + ".json");
  if (!mf) throw std::runtime_error("cannot open " + base_path + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  std::ifstream blob(base_path + ".bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open " + base_path + ".bin");
  std::map<std::string, Tensor> out;
  for (const auto& e : manifest.at("tensors")) {
    std::string name = e.at("name");
    std::string dtype = e.at("dtype");
    Shape shape = e.at("shape").get<Shape>();
    uint64_t offset = e.at("offset");
    size_t n = numel(shape);
    blob.seekg(static_cast<std::streamoff>(offset));
    std::vector<double> data(n);
    if (dtype == "f32") {
      std::vector<float> buf(n);
      blob.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
      for (size_t i = 0; i < n; ++i) data[i] = buf[i];
    } else if (dtype == "f64") {
      blob.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
    } else {
      throw std::runtime_error("load_archive: unsupported dtype " + dtype);
    }
    if (!blob) throw std::runtime_error(base_path + ".bin: truncated at " + name);
    out.emplace(name, Tensor::from(shape, std::move(data)));
  }
  return out;
}

}  // namespace pocvit
