#include "ccdnet/data/voc_xml.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <cmath>
#include <fstream>

#include "ccdnet/core/errors.hpp"

namespace ccdnet {

void write_voc_xml(const std::string& path, const std::string& image_filename, int width,
                   int height, const std::vector<Annotation>& annos) {
    std::ofstream f(path);
    if (!f) throw ParseError("voc: cannot open for writing: " + path);
    f << "<annotation>\n";
    f << "  <folder>images</folder>\n";
    f << "  <filename>" << image_filename << "</filename>\n";
    f << "  <size>\n";
    f << "    <width>" << width << "</width>\n";
    f << "    <height>" << height << "</height>\n";
    f << "    <depth>1</depth>\n";
    f << "  </size>\n";
    for (const auto& a : annos) {
        f << "  <object>\n";
        f << "    <name>target</name>\n";
        f << "    <difficult>0</difficult>\n";
        f << "    <bndbox>\n";
        f << "      <xmin>" << static_cast<long>(std::llround(a.box.x_min)) << "</xmin>\n";
        f << "      <ymin>" << static_cast<long>(std::llround(a.box.y_min)) << "</ymin>\n";
        f << "      <xmax>" << static_cast<long>(std::llround(a.box.x_max)) - 1 << "</xmax>\n";
        f << "      <ymax>" << static_cast<long>(std::llround(a.box.y_max)) - 1 << "</ymax>\n";
        f << "    </bndbox>\n";
        f << "  </object>\n";
    }
    f << "</annotation>\n";
    if (!f) throw ParseError("voc: write failed: " + path);
}

VocFile read_voc_xml(const std::string& path) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_xml(path, tree);
    } catch (const pt::xml_parser_error& e) {
        throw ParseError("voc: " + path + ": " + e.message() + " at line " +
                         std::to_string(e.line()));
    }
    VocFile out;
    try {
        const auto& ann = tree.get_child("annotation");
        out.image_filename = ann.get<std::string>("filename", "");
        out.width = ann.get<int>("size.width");
        out.height = ann.get<int>("size.height");
        for (const auto& [key, node] : ann) {
            if (key != "object") continue;
            Annotation a;
            a.box.x_min = node.get<double>("bndbox.xmin");
            a.box.y_min = node.get<double>("bndbox.ymin");
            a.box.x_max = node.get<double>("bndbox.xmax") + 1.0;  // inclusive -> half-open
            a.box.y_max = node.get<double>("bndbox.ymax") + 1.0;
            a.class_id = 0;
            out.annos.push_back(a);
        }
    } catch (const pt::ptree_error& e) {
        throw ParseError("voc: " + path + ": " + e.what());
    }
    return out;
}

void write_detections_csv(const std::string& path,
                          const std::vector<std::pair<std::string, std::vector<Detection>>>& dets) {
    std::ofstream f(path);
    if (!f) throw ParseError("csv: cannot open for writing: " + path);
    f << "image_id,x_min,y_min,x_max,y_max,score\n";
    for (const auto& [id, ds] : dets)
        for (const auto& d : ds)
            f << id << ',' << d.box.x_min << ',' << d.box.y_min << ',' << d.box.x_max << ','
              << d.box.y_max << ',' << d.score << '\n';
}

}  // namespace ccdnet
