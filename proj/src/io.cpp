#include "splat/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <png.h>

#include <nlohmann/json.hpp>

namespace splat {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw std::runtime_error(path + ": " + what);
}

std::uint8_t to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_ply(const std::string& path, const SurfelScene& scene) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open for writing");
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << scene.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property float nx\nproperty float ny\nproperty float nz\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "property float opacity\nproperty float sx\nproperty float sy\n"
        << "end_header\n";
    for (const GaussianSurfel& s : scene.surfels) {
        float f[6] = {static_cast<float>(s.center.x()), static_cast<float>(s.center.y()),
                      static_cast<float>(s.center.z()), static_cast<float>(s.normal.x()),
                      static_cast<float>(s.normal.y()), static_cast<float>(s.normal.z())};
        out.write(reinterpret_cast<const char*>(f), sizeof(f));
        const std::uint8_t rgb[3] = {to_byte(s.color.x()), to_byte(s.color.y()),
                                     to_byte(s.color.z())};
        out.write(reinterpret_cast<const char*>(rgb), 3);
        float g[3] = {static_cast<float>(s.opacity), static_cast<float>(s.scale.x()),
                      static_cast<float>(s.scale.y())};
        out.write(reinterpret_cast<const char*>(g), sizeof(g));
    }
    if (!out) fail(path, "write error");
}

SurfelScene read_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open");
    std::string line;
    std::getline(in, line);
    if (line != "ply" && line != "ply\r") fail(path, "not a PLY file");

    bool binary = false;
    std::size_t count = 0;
    std::vector<std::pair<std::string, std::string>> props;  // (type, name)
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "binary_little_endian") binary = true;
            else if (fmt == "ascii") binary = false;
            else fail(path, "unsupported PLY format " + fmt);
        } else if (tok == "element") {
            std::string name;
            ls >> name >> count;
            if (name != "vertex") fail(path, "unexpected element " + name);
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            props.emplace_back(type, name);
        } else if (tok == "end_header") {
            break;
        }
    }

    auto prop_index = [&](const std::string& name) {
        for (std::size_t i = 0; i < props.size(); ++i)
            if (props[i].second == name) return static_cast<int>(i);
        fail(path, "missing property " + name);
    };
    const int ix = prop_index("x"), iy = prop_index("y"), iz = prop_index("z");
    const int inx = prop_index("nx"), iny = prop_index("ny"), inz = prop_index("nz");
    const int ir = prop_index("red"), ig = prop_index("green"), ib = prop_index("blue");
    const int io = prop_index("opacity"), isx = prop_index("sx"), isy = prop_index("sy");

    SurfelScene scene;
    scene.surfels.resize(count);
    std::vector<double> row(props.size());
    for (std::size_t v = 0; v < count; ++v) {
        if (binary) {
            for (std::size_t p = 0; p < props.size(); ++p) {
                const std::string& t = props[p].first;
                if (t == "float" || t == "float32") {
                    float f;
                    in.read(reinterpret_cast<char*>(&f), 4);
                    row[p] = f;
                } else if (t == "double" || t == "float64") {
                    double d;
                    in.read(reinterpret_cast<char*>(&d), 8);
                    row[p] = d;
                } else if (t == "uchar" || t == "uint8") {
                    std::uint8_t b;
                    in.read(reinterpret_cast<char*>(&b), 1);
                    row[p] = b;
                } else {
                    fail(path, "unsupported property type " + t);
                }
            }
        } else {
            for (std::size_t p = 0; p < props.size(); ++p) {
                if (!(in >> row[p])) fail(path, "truncated ASCII data");
            }
        }
        if (!in) fail(path, "truncated data");
        GaussianSurfel& s = scene.surfels[v];
        s.center = Vec3(row[ix], row[iy], row[iz]);
        s.normal = Vec3(row[inx], row[iny], row[inz]);
        s.color = Vec3(row[ir] / 255.0, row[ig] / 255.0, row[ib] / 255.0);
        s.opacity = row[io];
        s.scale = Vec2(row[isx], row[isy]);
    }
    return scene;
}

void write_pfm(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) fail(path, "PFM needs 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open for writing");
    out << (img.channels == 3 ? "PF" : "Pf") << "\n"
        << img.width << " " << img.height << "\n-1.0\n";
    // Rows bottom-to-top.
    std::vector<float> row(static_cast<std::size_t>(img.width) * img.channels);
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                row[static_cast<std::size_t>(x) * img.channels + c] =
                    static_cast<float>(img.at(x, y, c));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) fail(path, "write error");
}

Image read_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open");
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    in.get();  // the single whitespace after the scale
    if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0) fail(path, "bad PFM header");
    if (scale > 0) fail(path, "big-endian PFM unsupported");
    const int channels = magic == "PF" ? 3 : 1;
    Image img(w, h, channels);
    std::vector<float> row(static_cast<std::size_t>(w) * channels);
    for (int y = h - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) fail(path, "truncated PFM data");
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(x, y, c) = row[static_cast<std::size_t>(x) * channels + c];
    }
    return img;
}

void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) fail(path, "PNG needs 1 or 3 channels");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) fail(path, "cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        fail(path, "libpng error");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.width, img.height, 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                row[static_cast<std::size_t>(x) * img.channels + c] = to_byte(img.at(x, y, c));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

void write_camera_json(const std::string& path, const CameraFile& cam) {
    std::ofstream out(path);
    if (!out) fail(path, "cannot open for writing");
    const CameraIntrinsics& k = cam.intrinsics;
    out << "{\n"
        << "  \"fx\": " << format_double(k.fx) << ",\n"
        << "  \"fy\": " << format_double(k.fy) << ",\n"
        << "  \"cx\": " << format_double(k.cx) << ",\n"
        << "  \"cy\": " << format_double(k.cy) << ",\n"
        << "  \"width\": " << k.width << ",\n"
        << "  \"height\": " << k.height << ",\n"
        << "  \"near\": " << format_double(k.near_plane) << ",\n"
        << "  \"far\": " << format_double(k.far_plane) << ",\n"
        << "  \"pose\": {\n    \"rotation\": [";
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            out << format_double(cam.pose.rotation(r, c)) << (r == 2 && c == 2 ? "" : ", ");
    out << "],\n    \"translation\": [";
    for (int i = 0; i < 3; ++i)
        out << format_double(cam.pose.translation[i]) << (i == 2 ? "" : ", ");
    out << "]\n  }\n}\n";
    if (!out) fail(path, "write error");
}

CameraFile read_camera_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(path, "cannot open");
    nlohmann::json j;
    in >> j;
    CameraFile cam;
    cam.intrinsics.fx = j.at("fx").get<double>();
    cam.intrinsics.fy = j.at("fy").get<double>();
    cam.intrinsics.cx = j.at("cx").get<double>();
    cam.intrinsics.cy = j.at("cy").get<double>();
    cam.intrinsics.width = j.at("width").get<int>();
    cam.intrinsics.height = j.at("height").get<int>();
    cam.intrinsics.near_plane = j.at("near").get<double>();
    cam.intrinsics.far_plane = j.at("far").get<double>();
    const auto& pose = j.at("pose");
    const auto rot = pose.at("rotation").get<std::vector<double>>();
    const auto trans = pose.at("translation").get<std::vector<double>>();
    if (rot.size() != 9 || trans.size() != 3) fail(path, "bad pose arrays");
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) cam.pose.rotation(r, c) = rot[r * 3 + c];
    for (int i = 0; i < 3; ++i) cam.pose.translation[i] = trans[i];
    return cam;
}

}  // namespace splat
