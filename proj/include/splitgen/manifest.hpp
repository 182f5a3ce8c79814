#pragma once

#include <json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "splitgen/common.hpp"

namespace splitgen {

inline constexpr int kManifestFormatVersion = 1;

struct ManifestRecord {
    int id = 0;
    std::string file; // relative to the dataset dir, e.g. images/000123.png
    int global_class = 0;
    std::vector<std::array<int, 4>> object_boxes; // x, y, w, h in pixels
    int object_count = 0;
    nlohmann::json colors; // full generative metadata; enough to re-render
};

struct DatasetManifest {
    std::string kind; // glyphs | scenes-easy | scenes-hard
    std::vector<ManifestRecord> records;
};

inline bool operator==(const ManifestRecord& a, const ManifestRecord& b) {
    return a.id == b.id && a.file == b.file && a.global_class == b.global_class &&
           a.object_boxes == b.object_boxes && a.object_count == b.object_count &&
           a.colors == b.colors;
}

inline std::filesystem::path write_manifest(const DatasetManifest& m,
                                            const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto path = dir / "manifest.jsonl";
    std::ofstream os(path, std::ios::binary);
    SG_CHECK(os.good(), "cannot write ", path.string());
    for (const auto& r : m.records) {
        nlohmann::json j;
        j["format_version"] = kManifestFormatVersion;
        j["kind"] = m.kind;
        j["id"] = r.id;
        j["file"] = r.file;
        j["global_class"] = r.global_class;
        j["object_boxes"] = r.object_boxes;
        j["object_count"] = r.object_count;
        j["colors"] = r.colors;
        os << j.dump() << "\n";
    }
    SG_CHECK(os.good(), "write failed for ", path.string());
    return path;
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.jsonl";
    std::ifstream is(path, std::ios::binary);
    SG_CHECK(is.good(), "cannot read ", path.string());
    DatasetManifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            fail("malformed manifest record at ", path.string(), ":", lineno, ": ", e.what());
        }
        try {
            SG_CHECK(j.at("format_version").get<int>() == kManifestFormatVersion,
                     "unsupported format_version");
            ManifestRecord r;
            const auto kind = j.at("kind").get<std::string>();
            if (m.records.empty())
                m.kind = kind;
            else
                SG_CHECK(kind == m.kind, "mixed dataset kinds");
            r.id = j.at("id").get<int>();
            r.file = j.at("file").get<std::string>();
            r.global_class = j.at("global_class").get<int>();
            r.object_boxes = j.at("object_boxes").get<std::vector<std::array<int, 4>>>();
            r.object_count = j.at("object_count").get<int>();
            r.colors = j.at("colors");
            SG_CHECK(r.object_count == static_cast<int>(r.object_boxes.size()),
                     "object_count does not match boxes");
            SG_CHECK(std::filesystem::exists(dir / r.file), "missing image file ", r.file);
            m.records.push_back(std::move(r));
        } catch (const std::exception& e) {
            fail("bad manifest record at ", path.string(), ":", lineno, ": ", e.what());
        }
    }
    return m;
}

} // namespace splitgen
