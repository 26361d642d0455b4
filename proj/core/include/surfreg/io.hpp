#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "surfreg/geometry.hpp"

namespace SURFREG_NAMESPACE {

/// XYZ: "x y z [label]" per line. OFF: vertices only, faces ignored.
/// PLY: ASCII with x, y, z and an optional integer "label" vertex property.
enum class CloudFormat { kXyz, kOff, kPly };

CloudFormat parse_cloud_format(const std::string& name);
const char* to_string(CloudFormat format);
/// From the file extension (.xyz, .txt, .off, .ply); throws FormatError otherwise.
CloudFormat format_from_path(const std::string& path);

/// Throws FormatError naming the source and line on malformed input, on a
/// point count that disagrees with the header, and on empty input.
PointCloud read_cloud(std::istream& in, CloudFormat format, const std::string& name = "<stream>");
/// Coordinates with 9 significant digits; labels are written when present.
void write_cloud(std::ostream& out, const PointCloud& pc, CloudFormat format);

PointCloud load_cloud(const std::string& path, std::optional<CloudFormat> format = std::nullopt);
void save_cloud(const PointCloud& pc, const std::string& path,
                std::optional<CloudFormat> format = std::nullopt);

/// Every cloud file of a directory, in file-name order.
std::vector<PointCloud> load_cloud_folder(const std::string& dir);

/// Two-column "i j" lines: point i of the first cloud maps to point j of the second.
void write_correspondence(std::ostream& out, const CorrespondenceMap& map);
CorrespondenceMap read_correspondence(std::istream& in, const std::string& name = "<stream>");
void save_correspondence(const CorrespondenceMap& map, const std::string& path);
CorrespondenceMap load_correspondence(const std::string& path);

}  // namespace SURFREG_NAMESPACE
