#pragma once

// Detection annotations and results in a COCO-like JSON layout. Boxes are
// [x, y, w, h] in the file and (x_min, y_min, x_max, y_max) in memory.

#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "genisp/detection_metrics.hpp"
#include <nlohmann/json.hpp>

namespace genisp::io {

class AnnotationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageInfo {
  ImageId id = 0;
  std::string file;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
};

struct Category {
  int id = 0;
  std::string name;
};

struct AnnotationFile {
  std::vector<ImageInfo> images;
  std::vector<Category> categories;
  AnnotationSet annotations;  // every listed image has an entry, possibly empty

  std::vector<int> category_ids() const {
    std::vector<int> ids;
    for (const auto& c : categories) ids.push_back(c.id);
    return ids;
  }
};

inline Box box_from_xywh(const nlohmann::json& bbox, int category) {
  if (!bbox.is_array() || bbox.size() != 4) throw AnnotationError("bbox must be [x, y, w, h]");
  const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
  const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
  if (!(w > 0 && h > 0)) throw AnnotationError("bbox width and height must be positive");
  return {x, y, x + w, y + h, category};
}

inline nlohmann::json xywh(const Box& b) {
  return nlohmann::json::array({b.x_min, b.y_min, b.x_max - b.x_min, b.y_max - b.y_min});
}

inline AnnotationFile parse_annotations(const nlohmann::json& j) {
  AnnotationFile f;
  try {
    std::set<int> cat_ids;
    for (const auto& c : j.at("categories")) {
      Category cat{c.at("id").get<int>(), c.value("name", "")};
      if (!cat_ids.insert(cat.id).second) {
        throw AnnotationError("duplicate category id " + std::to_string(cat.id));
      }
      f.categories.push_back(cat);
    }
    for (const auto& im : j.at("images")) {
      ImageInfo info{im.at("id").get<ImageId>(), im.value("file", ""),
                     im.value("width", 0u), im.value("height", 0u)};
      if (f.annotations.images.count(info.id)) {
        throw AnnotationError("duplicate image id " + std::to_string(info.id));
      }
      f.annotations.images[info.id] = {};
      f.images.push_back(info);
    }
    for (const auto& a : j.at("annotations")) {
      const auto image_id = a.at("image_id").get<ImageId>();
      const int category = a.at("category_id").get<int>();
      auto it = f.annotations.images.find(image_id);
      if (it == f.annotations.images.end()) {
        throw AnnotationError("annotation references unknown image id " + std::to_string(image_id));
      }
      if (!cat_ids.count(category)) {
        throw AnnotationError("annotation references unknown category id " +
                              std::to_string(category));
      }
      it->second.push_back(box_from_xywh(a.at("bbox"), category));
    }
  } catch (const nlohmann::json::exception& e) {
    throw AnnotationError(std::string("malformed annotation file: ") + e.what());
  }
  return f;
}

inline nlohmann::json to_json(const AnnotationFile& f) {
  nlohmann::json j;
  j["images"] = nlohmann::json::array();
  for (const auto& im : f.images) {
    j["images"].push_back({{"id", im.id}, {"file", im.file}, {"width", im.width}, {"height", im.height}});
  }
  j["categories"] = nlohmann::json::array();
  for (const auto& c : f.categories) j["categories"].push_back({{"id", c.id}, {"name", c.name}});
  j["annotations"] = nlohmann::json::array();
  for (const auto& [id, boxes] : f.annotations.images) {
    for (const auto& b : boxes) {
      j["annotations"].push_back({{"image_id", id}, {"category_id", b.category}, {"bbox", xywh(b)}});
    }
  }
  return j;
}

// Results list: [{"image_id", "category_id", "bbox": [x,y,w,h], "score"}].
inline DetectionSet parse_detections(const nlohmann::json& j) {
  DetectionSet d;
  try {
    if (!j.is_array()) throw AnnotationError("detections must be a JSON array");
    for (const auto& e : j) {
      const int category = e.at("category_id").get<int>();
      const double score = e.at("score").get<double>();
      if (!std::isfinite(score)) throw AnnotationError("detection score must be finite");
      d.images[e.at("image_id").get<ImageId>()].push_back({box_from_xywh(e.at("bbox"), category), score});
    }
  } catch (const nlohmann::json::exception& e) {
    throw AnnotationError(std::string("malformed detections file: ") + e.what());
  }
  return d;
}

inline nlohmann::json to_json(const DetectionSet& d) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [id, list] : d.images) {
    for (const auto& det : list) {
      j.push_back({{"image_id", id}, {"category_id", det.box.category}, {"bbox", xywh(det.box)},
                   {"score", det.score}});
    }
  }
  return j;
}

inline nlohmann::json to_json(const ApReport& r) {
  nlohmann::json j;
  j["AP50"] = r.ap50;
  j["AP75"] = r.ap75;
  j["AP"] = r.ap;
  j["per_category"] = nlohmann::json::object();
  for (const auto& [cat, ap] : r.per_category) {
    j["per_category"][std::to_string(cat)] = {{"AP50", ap.ap50}, {"AP75", ap.ap75}, {"AP", ap.ap}};
  }
  return j;
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw AnnotationError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw AnnotationError("invalid JSON in '" + path + "': " + e.what());
  }
}

}  // namespace genisp::io
