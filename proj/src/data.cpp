#include "msdnn/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "msdnn/rng.hpp"

namespace msdnn {

namespace {

struct PnmReader {
    std::ifstream in;
    std::string path;
    std::int64_t offset = 0;

    explicit PnmReader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw IoError("cannot open " + p);
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw FormatError(path + " at byte " + std::to_string(offset) + ": " + msg);
    }

    int get() {
        const int c = in.get();
        if (c != EOF) ++offset;
        return c;
    }

    // whitespace and '#' comments separate header tokens
    void skip_separators() {
        for (;;) {
            int c = in.peek();
            if (c == '#') {
                while (c != EOF && c != '\n') c = get();
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                get();
            } else {
                return;
            }
        }
    }

    int read_number(const char* what) {
        skip_separators();
        int c = in.peek();
        if (c == EOF || !std::isdigit(c)) fail(std::string("expected ") + what);
        long v = 0;
        while (std::isdigit(in.peek())) {
            v = v * 10 + (get() - '0');
            if (v > 1 << 24) fail(std::string(what) + " out of range");
        }
        return static_cast<int>(v);
    }
};

real byte_to_unit(unsigned char b) { return static_cast<real>(b) / real(255); }

unsigned char unit_to_byte(real v) {
    const double scaled = std::llround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0);
    return static_cast<unsigned char>(scaled);
}

} // namespace

Tensor read_pnm(const std::string& path) {
    PnmReader r(path);
    const int m0 = r.get(), m1 = r.get();
    if (m0 != 'P' || (m1 != '5' && m1 != '6')) r.fail("bad magic (want binary P5 or P6)");
    const int channels = (m1 == '6') ? 3 : 1;
    const int width = r.read_number("width");
    const int height = r.read_number("height");
    const int maxval = r.read_number("maxval");
    if (width < 1 || height < 1) r.fail("non-positive dimensions");
    if (maxval != 255) r.fail("maxval must be 255, got " + std::to_string(maxval));
    const int sep = r.get();
    if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n') r.fail("expected single whitespace after maxval");

    const std::int64_t count = static_cast<std::int64_t>(channels) * width * height;
    std::vector<unsigned char> bytes(static_cast<std::size_t>(count));
    r.in.read(reinterpret_cast<char*>(bytes.data()), count);
    if (r.in.gcount() != count) {
        r.offset += r.in.gcount();
        r.fail("payload truncated (expected " + std::to_string(count) + " bytes)");
    }

    // PNM interleaves channels per pixel; tensors are planar
    Tensor out({channels, height, width});
    std::int64_t k = 0;
    for (int h = 0; h < height; ++h)
        for (int w = 0; w < width; ++w)
            for (int c = 0; c < channels; ++c, ++k)
                out(c, h, w) = byte_to_unit(bytes[static_cast<std::size_t>(k)]);
    return out;
}

void write_pgm(const Tensor& map, const std::string& path) {
    Tensor flat;
    if (map.rank() == 3 && map.dim(0) == 1)
        flat = map.reshape({map.dim(1), map.dim(2)});
    else if (map.rank() == 2)
        flat = map;
    else
        throw ShapeError("write_pgm: expected [1,H,W] or [H,W], got " + shape_str(map.shape()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << flat.dim(1) << " " << flat.dim(0) << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(flat.size()));
    for (std::int64_t i = 0; i < flat.size(); ++i) bytes[static_cast<std::size_t>(i)] = unit_to_byte(flat[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

void write_ppm(const Tensor& image, const std::string& path) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw ShapeError("write_ppm: expected [3,H,W], got " + shape_str(image.shape()));
    const int H = image.dim(1), W = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(3) * H * W);
    std::int64_t k = 0;
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < 3; ++c, ++k) bytes[static_cast<std::size_t>(k)] = unit_to_byte(image(c, h, w));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

Tensor resize_bilinear(const Tensor& t, int out_h, int out_w) {
    if (t.rank() != 3) throw ShapeError("resize_bilinear: expected [C,H,W], got " + shape_str(t.shape()));
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: output dims must be positive");
    const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
    if (out_h == H && out_w == W) return t;

    Tensor out({C, out_h, out_w});
    const double sh = static_cast<double>(H) / out_h;
    const double sw = static_cast<double>(W) / out_w;
    for (int oh = 0; oh < out_h; ++oh) {
        // half-pixel centers: source = (dst + 0.5) * scale - 0.5, clamped
        double ys = std::clamp((oh + 0.5) * sh - 0.5, 0.0, static_cast<double>(H - 1));
        const int y0 = static_cast<int>(ys);
        const int y1 = std::min(y0 + 1, H - 1);
        const double fy = ys - y0;
        for (int ow = 0; ow < out_w; ++ow) {
            double xs = std::clamp((ow + 0.5) * sw - 0.5, 0.0, static_cast<double>(W - 1));
            const int x0 = static_cast<int>(xs);
            const int x1 = std::min(x0 + 1, W - 1);
            const double fx = xs - x0;
            for (int c = 0; c < C; ++c) {
                const double top = (1 - fx) * t(c, y0, x0) + fx * t(c, y0, x1);
                const double bot = (1 - fx) * t(c, y1, x0) + fx * t(c, y1, x1);
                out(c, oh, ow) = static_cast<real>((1 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

Tensor resize_mask(const Tensor& mask, int out_h, int out_w) {
    Tensor resized = resize_bilinear(mask, out_h, out_w);
    for (std::int64_t i = 0; i < resized.size(); ++i) resized[i] = resized[i] > real(0.5) ? real(1) : real(0);
    return resized;
}

namespace {

struct ShapeSpec {
    int kind = 0; // 0 ellipse, 1 rectangle, 2 triangle
    double cx = 0, cy = 0;
    double ax = 0, ay = 0;      // ellipse semi-axes / rect half-extents
    double vx[3] = {0, 0, 0};   // triangle vertices
    double vy[3] = {0, 0, 0};

    bool contains(double x, double y) const {
        switch (kind) {
            case 0: {
                const double dx = (x - cx) / ax, dy = (y - cy) / ay;
                return dx * dx + dy * dy <= 1.0;
            }
            case 1:
                return std::abs(x - cx) <= ax && std::abs(y - cy) <= ay;
            default: {
                // consistent sign of the three edge cross products
                double s[3];
                for (int i = 0; i < 3; ++i) {
                    const int j = (i + 1) % 3;
                    s[i] = (vx[j] - vx[i]) * (y - vy[i]) - (vy[j] - vy[i]) * (x - vx[i]);
                }
                return (s[0] >= 0 && s[1] >= 0 && s[2] >= 0) || (s[0] <= 0 && s[1] <= 0 && s[2] <= 0);
            }
        }
    }
};

// Coarse 5x5 grid upsampled bilinearly: cheap low-frequency noise.
Tensor noise_background(int size, Rng& rng, double lo, double hi) {
    const int grid = 5;
    Tensor coarse({3, grid, grid});
    for (std::int64_t i = 0; i < coarse.size(); ++i) coarse[i] = static_cast<real>(rng.uniform(lo, hi));
    return resize_bilinear(coarse, size, size);
}

} // namespace

Sample synth_sample(int size, std::uint64_t geometry_seed, std::uint64_t texture_seed, const std::string& id) {
    if (size < 16 || size % 16 != 0) throw InputError("synth_sample: size must be a positive multiple of 16");
    Rng geom(geometry_seed);
    Rng tex(texture_seed);

    const int n_shapes = geom.uniform_int(1, 3);
    std::vector<ShapeSpec> shapes(static_cast<std::size_t>(n_shapes));
    for (ShapeSpec& s : shapes) {
        s.kind = geom.uniform_int(0, 2);
        s.cx = geom.uniform(0.3, 0.7) * size;
        s.cy = geom.uniform(0.3, 0.7) * size;
        if (s.kind == 2) {
            // near-equilateral triangle; scale bounds keep area >= ~4% of the image
            const double radius = geom.uniform(0.20, 0.30) * size;
            const double base = geom.uniform(0.0, 2.0 * 3.14159265358979323846);
            for (int v = 0; v < 3; ++v) {
                const double angle = base + v * 2.0943951023931953 + geom.uniform(-0.12, 0.12);
                s.vx[v] = s.cx + radius * std::cos(angle);
                s.vy[v] = s.cy + radius * std::sin(angle);
            }
        } else {
            s.ax = geom.uniform(0.12, 0.30) * size;
            s.ay = geom.uniform(0.12, 0.30) * size;
        }
    }

    Sample sample;
    sample.id = id;
    sample.mask = Tensor({1, size, size});
    for (int h = 0; h < size; ++h)
        for (int w = 0; w < size; ++w) {
            const double x = w + 0.5, y = h + 0.5;
            for (const ShapeSpec& s : shapes)
                if (s.contains(x, y)) {
                    sample.mask(0, h, w) = 1;
                    break;
                }
        }

    // dark textured background, bright foreground colors with mild noise
    sample.image = noise_background(size, tex, 0.10, 0.40);
    std::vector<std::array<double, 3>> colors(static_cast<std::size_t>(n_shapes));
    for (auto& c : colors)
        for (double& v : c) v = tex.uniform(0.60, 0.95);
    for (int h = 0; h < size; ++h)
        for (int w = 0; w < size; ++w) {
            const double x = w + 0.5, y = h + 0.5;
            for (std::size_t k = 0; k < shapes.size(); ++k)
                if (shapes[k].contains(x, y)) {
                    for (int c = 0; c < 3; ++c) {
                        const double v = colors[k][static_cast<std::size_t>(c)] + tex.uniform(-0.05, 0.05);
                        sample.image(c, h, w) = static_cast<real>(std::clamp(v, 0.0, 1.0));
                    }
                    break;
                }
        }
    return sample;
}

std::vector<Sample> synth_dataset(int n, int size, std::uint64_t seed) {
    if (n < 1) throw InputError("synth_dataset: n must be >= 1");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        out.push_back(synth_sample(size, mix_seed(seed, 2 * idx), mix_seed(seed, 2 * idx + 1),
                                   "synth" + std::to_string(i)));
    }
    return out;
}

std::vector<ManifestEntry> parse_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();

    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab1 == std::string::npos || tab2 == std::string::npos)
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected image<TAB>mask<TAB>id");
        ManifestEntry e;
        e.image_path = (base / line.substr(0, tab1)).string();
        e.mask_path = (base / line.substr(tab1 + 1, tab2 - tab1 - 1)).string();
        e.id = line.substr(tab2 + 1);
        if (e.id.empty()) throw FormatError(path + ":" + std::to_string(lineno) + ": empty id");
        if (!seen.insert(e.id).second)
            throw FormatError(path + ":" + std::to_string(lineno) + ": duplicate id " + e.id);
        entries.push_back(std::move(e));
    }
    return entries;
}

Tensor to_gray(const Tensor& image) {
    if (image.rank() != 3) throw ShapeError("to_gray: expected [C,H,W]");
    if (image.dim(0) == 1) return image;
    if (image.dim(0) != 3) throw ShapeError("to_gray: expected 1 or 3 channels");
    Tensor out({1, image.dim(1), image.dim(2)});
    for (int h = 0; h < image.dim(1); ++h)
        for (int w = 0; w < image.dim(2); ++w)
            out(0, h, w) = (image(0, h, w) + image(1, h, w) + image(2, h, w)) / real(3);
    return out;
}

Tensor to_rgb(const Tensor& image) {
    if (image.rank() != 3) throw ShapeError("to_rgb: expected [C,H,W]");
    if (image.dim(0) == 3) return image;
    if (image.dim(0) != 1) throw ShapeError("to_rgb: expected 1 or 3 channels");
    Tensor out({3, image.dim(1), image.dim(2)});
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < image.dim(1); ++h)
            for (int w = 0; w < image.dim(2); ++w) out(c, h, w) = image(0, h, w);
    return out;
}

std::vector<Sample> load_manifest(const std::string& path, int target_size) {
    const std::vector<ManifestEntry> entries = parse_manifest(path);
    std::vector<Sample> samples;
    samples.reserve(entries.size());
    for (const ManifestEntry& e : entries) {
        try {
            Sample s;
            s.id = e.id;
            const Tensor img = to_rgb(read_pnm(e.image_path));
            const Tensor mask = to_gray(read_pnm(e.mask_path));
            if (img.dim(1) != mask.dim(1) || img.dim(2) != mask.dim(2))
                throw ShapeError("image " + shape_str(img.shape()) + " vs mask " + shape_str(mask.shape()));
            s.image = resize_bilinear(img, target_size, target_size);
            s.mask = resize_mask(mask, target_size, target_size);
            samples.push_back(std::move(s));
        } catch (const std::exception& ex) {
            throw InputError("manifest entry '" + e.id + "': " + ex.what());
        }
    }
    return samples;
}

} // namespace msdnn
