#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "countgraph/counting.hpp"

namespace countgraph {

/// One scene per JSONL line:
/// {"boxes": [[x_min,y_min,x_max,y_max],...], "attention": [...], "true_count": k}
/// true_count is omitted for unlabeled scenes.
inline nlohmann::ordered_json scene_to_json(const Scene& scene) {
  nlohmann::ordered_json j;
  auto boxes = nlohmann::ordered_json::array();
  for (const Box& b : scene.boxes) {
    boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
  }
  j["boxes"] = std::move(boxes);
  auto attention = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < scene.attention.size(); ++i) {
    attention.push_back(scene.attention[i]);
  }
  j["attention"] = std::move(attention);
  if (scene.true_count) j["true_count"] = *scene.true_count;
  return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene scene;
  const auto& boxes = j.at("boxes");
  scene.boxes.reserve(boxes.size());
  for (const auto& b : boxes) {
    if (b.size() != 4) throw std::invalid_argument("scene: box needs 4 coordinates");
    scene.boxes.push_back(Box{b[0].get<double>(), b[1].get<double>(),
                              b[2].get<double>(), b[3].get<double>()});
  }
  const auto& attention = j.at("attention");
  scene.attention.resize(static_cast<Eigen::Index>(attention.size()));
  for (std::size_t i = 0; i < attention.size(); ++i) {
    scene.attention[static_cast<Eigen::Index>(i)] = attention[i].get<double>();
  }
  if (j.contains("true_count") && !j.at("true_count").is_null()) {
    scene.true_count = j.at("true_count").get<int>();
  }
  validate(scene);
  return scene;
}

inline std::vector<Scene> read_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::vector<Scene> scenes;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      scenes.push_back(scene_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << path << ":" << line_number << ": " << e.what();
      throw std::runtime_error(msg.str());
    }
  }
  return scenes;
}

inline void write_scenes(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  for (const Scene& scene : scenes) {
    out << scene_to_json(scene).dump() << '\n';
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace countgraph
