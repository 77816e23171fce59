// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/io_metrics.hpp"

#include <json.hpp>
#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace npbir::io {

namespace fs = std::filesystem;

namespace {

std::string extension(const std::string& path) {
    std::string e = fs::path(path).extension().string();
    for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e;
}

void check_channels(const ImageBuffer& img, const char* what) {
    if (img.channels != 1 && img.channels != 3) throw ArgumentError(std::string(what) + ": expects 1 or 3 channels");
    if (img.width < 1 || img.height < 1) throw ArgumentError(std::string(what) + ": empty image");
}

[[noreturn]] void png_quiet_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
void png_quiet_warning(png_structp, png_const_charp) {}

}  // namespace

void write_pfm(const std::string& path, const ImageBuffer& img) {
    check_channels(img, "write_pfm");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw LoadError("cannot write " + path);
    os << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << '\n' << "-1.0\n";
    const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<float> buf(row);
    for (int y = img.height - 1; y >= 0; --y) {
        for (std::size_t i = 0; i < row; ++i) buf[i] = static_cast<float>(img.data[static_cast<std::size_t>(y) * row + i]);
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(row * sizeof(float)));
    }
    if (!os) throw LoadError("write failed: " + path);
}

ImageBuffer read_pfm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot read " + path);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0;
    is >> magic >> w >> h >> scale;
    is.get();
    if ((magic != "PF" && magic != "Pf") || w < 1 || h < 1 || scale == 0)
        throw LoadError("not a PFM file: " + path);
    if (scale > 0) throw LoadError("big-endian PFM not supported: " + path);
    ImageBuffer img(w, h, magic == "PF" ? 3 : 1);
    const std::size_t row = static_cast<std::size_t>(w) * img.channels;
    std::vector<float> buf(row);
    for (int y = h - 1; y >= 0; --y) {
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(row * sizeof(float)));
        if (!is) throw LoadError("truncated PFM: " + path);
        for (std::size_t i = 0; i < row; ++i) img.data[static_cast<std::size_t>(y) * row + i] = buf[i];
    }
    return img;
}

void write_png(const std::string& path, const ImageBuffer& img, int bit_depth) {
    check_channels(img, "write_png");
    if (bit_depth != 8 && bit_depth != 16) throw ArgumentError("write_png: bit depth must be 8 or 16");
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw LoadError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_quiet_error, png_quiet_warning);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw LoadError("libpng write error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), bit_depth,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const int bytes = bit_depth / 8;
    const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
    const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<unsigned char> buf(row * bytes);
    for (int y = 0; y < img.height; ++y) {
        for (std::size_t i = 0; i < row; ++i) {
            const double v = img.data[static_cast<std::size_t>(y) * row + i];
            const auto q = static_cast<unsigned>(std::lround(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * maxv));
            if (bytes == 1) {
                buf[i] = static_cast<unsigned char>(q);
            } else {
                buf[2 * i] = static_cast<unsigned char>(q >> 8);
                buf[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
            }
        }
        png_write_row(png, buf.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageBuffer read_png(const std::string& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw LoadError("cannot read " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_quiet_error, png_quiet_warning);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw LoadError("invalid PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = png_get_channels(png, info);
    depth = png_get_bit_depth(png, info);
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw LoadError("unsupported PNG channel layout: " + path);
    }
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> buf(rowbytes * static_cast<std::size_t>(h));
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + rowbytes * static_cast<std::size_t>(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageBuffer img(w, h, ch);
    const std::size_t n = static_cast<std::size_t>(w) * ch;
    for (int y = 0; y < h; ++y)
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned char* r = rows[static_cast<std::size_t>(y)];
            double v;
            if (depth == 16) {
                uint16_t q;
                std::memcpy(&q, r + 2 * i, 2);
                v = q / 65535.0;
            } else {
                v = r[i] / 255.0;
            }
            img.data[static_cast<std::size_t>(y) * n + i] = v;
        }
    return img;
}

double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
    if (v <= 0.0) return 0.0;
    return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

ImageBuffer srgb_to_linear(const ImageBuffer& img) {
    ImageBuffer out = img;
    for (auto& v : out.data) v = srgb_to_linear(v);
    return out;
}

ImageBuffer linear_to_srgb(const ImageBuffer& img) {
    ImageBuffer out = img;
    for (auto& v : out.data) v = linear_to_srgb(v);
    return out;
}

ImageBuffer load_image(const std::string& path, bool srgb) {
    const auto ext = extension(path);
    if (ext == ".pfm") return read_pfm(path);
    if (ext == ".png") return srgb ? srgb_to_linear(read_png(path)) : read_png(path);
    throw LoadError("unsupported image format: " + path);
}

void save_image(const std::string& path, const ImageBuffer& img, bool srgb) {
    const auto ext = extension(path);
    if (ext == ".pfm") return write_pfm(path, img);
    if (ext == ".png") return write_png(path, srgb ? linear_to_srgb(img) : img);
    throw ArgumentError("unsupported image format: " + path);
}

// ---------------------------------------------------------------------------

PosedDataset load_dataset(const std::string& root) {
    const fs::path base(root);
    const fs::path cams = base / "cameras.json";
    std::ifstream is(cams);
    if (!is) throw LoadError("missing " + cams.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw LoadError("cameras.json: " + std::string(e.what()));
    }
    if (!j.contains("frames") || !j["frames"].is_array()) throw LoadError("cameras.json: missing \"frames\" array");
    PosedDataset ds;
    int index = 0;
    for (const auto& f : j["frames"]) {
        const std::string where = "view " + std::to_string(index);
        try {
            View v;
            v.name = f.value("name", "view" + std::to_string(index));
            v.split = f.value("split", "train");
            Camera& c = v.camera;
            c.width = f.at("width").get<int>();
            c.height = f.at("height").get<int>();
            c.fx = f.at("fx").get<double>();
            c.fy = f.at("fy").get<double>();
            c.cx = f.at("cx").get<double>();
            c.cy = f.at("cy").get<double>();
            const auto m = f.at("c2w").get<std::vector<double>>();
            if (m.size() != 16) throw LoadError("c2w must have 16 entries");
            for (int r = 0; r < 3; ++r) {
                for (int k = 0; k < 3; ++k) c.rotation(r, k) = m[static_cast<std::size_t>(4 * r + k)];
                c.position[r] = m[static_cast<std::size_t>(4 * r + 3)];
            }
            try {
                c.validate(1e-4);
            } catch (const ArgumentError& e) {
                throw LoadError(e.what());
            }
            const fs::path img_path = base / f.at("image").get<std::string>();
            if (!fs::exists(img_path)) throw LoadError("missing image " + img_path.string());
            v.image = load_image(img_path.string(), true);
            if (v.image.channels == 1) {
                ImageBuffer rgb(v.image.width, v.image.height, 3);
                for (int y = 0; y < rgb.height; ++y)
                    for (int x = 0; x < rgb.width; ++x) rgb.set_rgb(x, y, v.image.rgb(x, y));
                v.image = std::move(rgb);
            }
            if (v.image.width != c.width || v.image.height != c.height)
                throw LoadError("image size differs from camera intrinsics");
            if (f.contains("mask") && !f["mask"].is_null()) {
                const fs::path mp = base / f["mask"].get<std::string>();
                if (!fs::exists(mp)) throw LoadError("missing mask " + mp.string());
                ImageBuffer mk = load_image(mp.string(), false);
                if (mk.width != c.width || mk.height != c.height) throw LoadError("mask size differs from image");
                if (mk.channels == 3) {
                    ImageBuffer g(mk.width, mk.height, 1);
                    for (int y = 0; y < mk.height; ++y)
                        for (int x = 0; x < mk.width; ++x) g.at(x, y) = mk.at(x, y, 0);
                    mk = std::move(g);
                }
                v.mask = std::move(mk);
            }
            ds.views.push_back(std::move(v));
        } catch (const LoadError& e) {
            throw LoadError(where + ": " + e.what());
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(where + ": " + e.what());
        }
        ++index;
    }
    if (j.contains("env") && j["env"].is_string()) ds.env_path = (base / j["env"].get<std::string>()).string();
    return ds;
}

void save_dataset(const std::string& root, const PosedDataset& dataset) {
    const fs::path base(root);
    fs::create_directories(base / "images");
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& v : dataset.views) {
        nlohmann::json f;
        f["name"] = v.name;
        f["split"] = v.split;
        f["width"] = v.camera.width;
        f["height"] = v.camera.height;
        f["fx"] = v.camera.fx;
        f["fy"] = v.camera.fy;
        f["cx"] = v.camera.cx;
        f["cy"] = v.camera.cy;
        std::vector<double> m(16, 0.0);
        for (int r = 0; r < 3; ++r) {
            for (int k = 0; k < 3; ++k) m[static_cast<std::size_t>(4 * r + k)] = v.camera.rotation(r, k);
            m[static_cast<std::size_t>(4 * r + 3)] = v.camera.position[r];
        }
        m[15] = 1.0;
        f["c2w"] = m;
        const std::string img = "images/" + v.name + ".pfm";
        write_pfm((base / img).string(), v.image);
        f["image"] = img;
        if (v.mask) {
            fs::create_directories(base / "masks");
            const std::string mk = "masks/" + v.name + ".png";
            write_png((base / mk).string(), *v.mask);
            f["mask"] = mk;
        }
        frames.push_back(f);
    }
    nlohmann::json j;
    j["frames"] = frames;
    if (dataset.env_path) j["env"] = fs::relative(*dataset.env_path, base).string();
    std::ofstream os(base / "cameras.json");
    if (!os) throw LoadError("cannot write cameras.json under " + root);
    os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

namespace {

void check_same(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
    if (!a.same_shape(b)) throw ArgumentError(std::string(what) + ": image shapes differ");
    if (a.data.empty()) throw ArgumentError(std::string(what) + ": empty images");
}

}  // namespace

double mse(const ImageBuffer& a, const ImageBuffer& b) {
    check_same(a, b, "mse");
    // Neumaier-compensated sum.
    double s = 0.0, c = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        const double x = d * d, t = s + x;
        c += std::abs(s) >= x ? (s - t) + x : (x - t) + s;
        s = t;
    }
    return (s + c) / static_cast<double>(a.data.size());
}

double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak) {
    const double m = mse(a, b);
    if (m == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(peak * peak / m);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    check_same(a, b, "ssim");
    constexpr int kWin = 11;
    if (a.width < kWin || a.height < kWin) throw ArgumentError("ssim: images must be at least 11x11");
    double g[kWin];
    double gs = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - 5;
        g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
        gs += g[i];
    }
    for (double& v : g) v /= gs;
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const int W = a.width, H = a.height, ow = W - kWin + 1, oh = H - kWin + 1;

    // Separable filtering of x, y, x^2, y^2, xy.
    auto filter = [&](const std::vector<double>& src) {
        std::vector<double> tmp(static_cast<std::size_t>(ow) * H), out(static_cast<std::size_t>(ow) * oh);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = 0;
                for (int k = 0; k < kWin; ++k) s += g[k] * src[static_cast<std::size_t>(y) * W + x + k];
                tmp[static_cast<std::size_t>(y) * ow + x] = s;
            }
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = 0;
                for (int k = 0; k < kWin; ++k) s += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
                out[static_cast<std::size_t>(y) * ow + x] = s;
            }
        return out;
    };

    double total = 0.0;
    const std::size_t n = static_cast<std::size_t>(W) * H;
    for (int c = 0; c < a.channels; ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (std::size_t p = 0; p < n; ++p) {
            x[p] = a.data[p * a.channels + c];
            y[p] = b.data[p * b.channels + c];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
        double s = 0.0;
        for (std::size_t p = 0; p < mx.size(); ++p) {
            const double va = sxx[p] - mx[p] * mx[p], vb = syy[p] - my[p] * my[p], cov = sxy[p] - mx[p] * my[p];
            s += ((2 * mx[p] * my[p] + C1) * (2 * cov + C2)) /
                 ((mx[p] * mx[p] + my[p] * my[p] + C1) * (va + vb + C2));
        }
        total += s / static_cast<double>(mx.size());
    }
    return total / a.channels;
}

AlbedoScale albedo_alignment(const ImageBuffer& pred, const ImageBuffer& gt, const ImageBuffer& mask) {
    check_same(pred, gt, "albedo_alignment");
    if (mask.width != pred.width || mask.height != pred.height) throw ArgumentError("albedo_alignment: mask size");
    AlbedoScale out;
    Rgb num = Rgb::Zero(), den = Rgb::Zero();
    bool any = false;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (!(mask.at(x, y) > 0.5)) continue;
            any = true;
            const Rgb p = pred.rgb(x, y), g = gt.rgb(x, y);
            num += p * g;
            den += p * p;
        }
    if (!any) throw ArgumentError("albedo_alignment: empty mask");
    for (int c = 0; c < 3; ++c) {
        if (den[c] > 0) {
            out.scale[c] = num[c] / den[c];
        } else {
            out.scale[c] = 1.0;
            out.degenerate = true;
        }
    }
    return out;
}

ImageBuffer apply_scale(const ImageBuffer& img, const Rgb& scale) {
    ImageBuffer out = img;
    for (std::size_t p = 0; p < out.pixel_count(); ++p)
        for (int c = 0; c < out.channels; ++c) out.data[p * out.channels + c] *= scale[std::min(c, 2)];
    return out;
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream os(path);
    if (!os) throw LoadError("cannot write " + path);
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
        os << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
}

// ---------------------------------------------------------------------------

namespace {

std::string digest_hex(const EVP_MD* md, std::initializer_list<std::string_view> parts) {
    std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), md, nullptr) != 1) throw std::runtime_error("digest init failed");
    for (auto p : parts) EVP_DigestUpdate(ctx.get(), p.data(), p.size());
    EVP_DigestFinal_ex(ctx.get(), out, &len);
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[out[i] >> 4];
        s += hex[out[i] & 15];
    }
    return s;
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string sha256_hex(std::string_view bytes) { return digest_hex(EVP_sha256(), {bytes}); }

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

std::string git_blob_sha1(std::string_view bytes) {
    const std::string header = "blob " + std::to_string(bytes.size());
    return digest_hex(EVP_sha1(), {std::string_view(header.data(), header.size() + 1), bytes});
}

std::string git_blob_sha1_file(const std::string& path) { return git_blob_sha1(read_file(path)); }

}  // namespace npbir::io
