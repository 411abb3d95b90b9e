#pragma once

#include <string>
#include <vector>

#include "ccdnet/data/annotation.hpp"

namespace ccdnet {

/// VOC2007-style annotation file for one image. Boxes are stored internally
/// half-open; the XML carries inclusive max coordinates (max - 1).
void write_voc_xml(const std::string& path, const std::string& image_filename, int width,
                   int height, const std::vector<Annotation>& annos);

struct VocFile {
    std::string image_filename;
    int width = 0, height = 0;
    std::vector<Annotation> annos;
};

VocFile read_voc_xml(const std::string& path);

/// "image_id,x_min,y_min,x_max,y_max,score" rows.
void write_detections_csv(const std::string& path,
                          const std::vector<std::pair<std::string, std::vector<Detection>>>& dets);

}  // namespace ccdnet
