#ifndef MSDNN_DATA_HPP
#define MSDNN_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "msdnn/tensor.hpp"

namespace msdnn {

/// RGB image in [0,1] paired with a binary mask, spatial sizes equal.
struct Sample {
    Tensor image; // [3,H,W]
    Tensor mask;  // [1,H,W], values in {0,1}
    std::string id;
};

struct ManifestEntry {
    std::string image_path;
    std::string mask_path;
    std::string id;
};

/// Reads binary PGM (P5) or PPM (P6) with maxval 255 into [1,H,W] or [3,H,W],
/// values byte/255. Malformed input throws FormatError naming the byte offset.
Tensor read_pnm(const std::string& path);

/// Writes [1,H,W] (or [H,W]) as binary PGM, round(v*255) clamped to [0,255].
void write_pgm(const Tensor& map, const std::string& path);

/// Writes [3,H,W] as binary PPM, same quantization.
void write_ppm(const Tensor& image, const std::string& path);

/// Bilinear resize with half-pixel-center alignment; output range stays within
/// the input range.
Tensor resize_bilinear(const Tensor& t, int out_h, int out_w);

/// Resize then re-binarize at 0.5 (resampling a binary mask makes gray edges).
Tensor resize_mask(const Tensor& mask, int out_h, int out_w);

/// Seeded synthetic saliency set: low-frequency noise background plus 1..3
/// filled shapes (ellipse / rectangle / triangle) with contrasting color; the
/// mask is the exact union of shape interiors. Geometry and texture use split
/// seed streams, so masks depend only on the geometry stream.
std::vector<Sample> synth_dataset(int n, int size, std::uint64_t seed);
Sample synth_sample(int size, std::uint64_t geometry_seed, std::uint64_t texture_seed, const std::string& id);

/// Manifest: UTF-8 text, one "image_path<TAB>mask_path<TAB>id" per line,
/// '#' comments; paths resolve relative to the manifest's directory.
std::vector<ManifestEntry> parse_manifest(const std::string& path);

/// Loads and resizes every manifest entry; errors name the offending id.
std::vector<Sample> load_manifest(const std::string& path, int target_size);

/// Grayscale [1,H,W] from [3,H,W] (channel mean) or passthrough for [1,H,W].
Tensor to_gray(const Tensor& image);

/// [1,H,W] -> [3,H,W] by channel replication; [3,H,W] passes through.
Tensor to_rgb(const Tensor& image);

} // namespace msdnn

#endif
