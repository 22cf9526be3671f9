#ifndef MESEG_NIFTI_HPP
#define MESEG_NIFTI_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "meseg/volume.hpp"

namespace meseg {

// NIfTI-1 datatype codes (the supported subset).
enum class NiftiDatatype : std::int16_t {
  uint8 = 2,
  int16 = 4,
  int32 = 8,
  float32 = 16,
  float64 = 64,
};

struct NiftiMeta {
  std::array<int, 4> dim{1, 1, 1, 1};  // nx, ny, nz, nt
  NiftiDatatype datatype = NiftiDatatype::float32;
  Spacing spacing;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  bool big_endian = false;
  std::string magic = "n+1";
};

struct NiftiReadResult {
  Volume volume;
  NiftiMeta meta;
};

// Parses a single-file NIfTI-1 image ("n+1" magic, 348-byte header).
// Endianness is auto-detected from the header-size field; a gzip container
// (leading bytes 0x1f 0x8b) is transparently decompressed. Values have
// scl_slope/scl_inter applied when slope != 0. ".hdr/.img" pairs ("ni1")
// and 4D files are rejected.
NiftiReadResult nifti_read(const std::vector<std::uint8_t>& bytes);
NiftiReadResult nifti_read_file(const std::string& path);

struct NiftiWriteOptions {
  NiftiDatatype datatype = NiftiDatatype::float32;
  bool gzip = false;
};

// Emits a conforming little-endian single-file NIfTI-1: magic "n+1",
// vox_offset 352, spacing in pixdim[1..3]. Dims above the int16 header
// limit are an error.
std::vector<std::uint8_t> nifti_write(const Volume& v,
                                      const NiftiWriteOptions& opt = {});
void nifti_write_file(const std::string& path, const Volume& v,
                      const NiftiWriteOptions& opt = {});

std::vector<std::uint8_t> nifti_write_mask(const BinaryMask& m,
                                           bool gzip = false);
void nifti_write_mask_file(const std::string& path, const BinaryMask& m,
                           bool gzip = false);

// Conversions for reading masks and probability maps from volumes.
BinaryMask volume_to_mask(const Volume& v);      // true iff value != 0
ProbMap volume_to_probmap(const Volume& v);      // validates [0,1]

}  // namespace meseg

#endif
