#include "meseg/nifti.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace meseg {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;

bool is_gzip(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK)
    throw Error(Errc::format, "nifti: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());

  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int ret = Z_OK;
  while (ret != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(Errc::format, "nifti: corrupt gzip stream");
    }
    out.insert(out.end(), buf, buf + sizeof(buf) - zs.avail_out);
  }
  inflateEnd(&zs);
  return out;
}

std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK)
    throw Error(Errc::format, "nifti: deflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());

  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int ret = Z_OK;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    ret = deflate(&zs, Z_FINISH);
    out.insert(out.end(), buf, buf + sizeof(buf) - zs.avail_out);
  } while (ret == Z_OK);
  deflateEnd(&zs);
  if (ret != Z_STREAM_END)
    throw Error(Errc::format, "nifti: deflate failed");
  return out;
}

// Little/big-endian scalar access into a byte buffer.
class Cursor {
 public:
  Cursor(const std::uint8_t* p, bool swap) : p_(p), swap_(swap) {}

  std::int16_t i16(std::size_t off) const {
    std::uint8_t b[2];
    get(off, b, 2);
    return static_cast<std::int16_t>(b[0] | (b[1] << 8));
  }
  std::int32_t i32(std::size_t off) const {
    std::uint8_t b[4];
    get(off, b, 4);
    return static_cast<std::int32_t>(static_cast<std::uint32_t>(b[0]) |
                                     (static_cast<std::uint32_t>(b[1]) << 8) |
                                     (static_cast<std::uint32_t>(b[2]) << 16) |
                                     (static_cast<std::uint32_t>(b[3]) << 24));
  }
  float f32(std::size_t off) const {
    std::int32_t v = i32(off);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }

 private:
  void get(std::size_t off, std::uint8_t* b, std::size_t n) const {
    for (std::size_t i = 0; i < n; ++i)
      b[i] = swap_ ? p_[off + n - 1 - i] : p_[off + i];
  }
  const std::uint8_t* p_;
  bool swap_;
};

std::size_t dtype_size(NiftiDatatype dt) {
  switch (dt) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::int16: return 2;
    case NiftiDatatype::int32: return 4;
    case NiftiDatatype::float32: return 4;
    case NiftiDatatype::float64: return 8;
  }
  throw Error(Errc::format, "nifti: unsupported datatype");
}

double decode_value(const std::uint8_t* p, NiftiDatatype dt, bool swap) {
  std::uint8_t b[8];
  const std::size_t n = dtype_size(dt);
  for (std::size_t i = 0; i < n; ++i) b[i] = swap ? p[n - 1 - i] : p[i];
  switch (dt) {
    case NiftiDatatype::uint8:
      return static_cast<double>(b[0]);
    case NiftiDatatype::int16: {
      std::int16_t v = static_cast<std::int16_t>(b[0] | (b[1] << 8));
      return static_cast<double>(v);
    }
    case NiftiDatatype::int32: {
      std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                        (static_cast<std::uint32_t>(b[1]) << 8) |
                        (static_cast<std::uint32_t>(b[2]) << 16) |
                        (static_cast<std::uint32_t>(b[3]) << 24);
      std::int32_t v;
      std::memcpy(&v, &u, 4);
      return static_cast<double>(v);
    }
    case NiftiDatatype::float32: {
      std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                        (static_cast<std::uint32_t>(b[1]) << 8) |
                        (static_cast<std::uint32_t>(b[2]) << 16) |
                        (static_cast<std::uint32_t>(b[3]) << 24);
      float f;
      std::memcpy(&f, &u, 4);
      return static_cast<double>(f);
    }
    case NiftiDatatype::float64: {
      std::uint64_t u = 0;
      for (int i = 7; i >= 0; --i) u = (u << 8) | b[i];
      double d;
      std::memcpy(&d, &u, 8);
      return d;
    }
  }
  throw Error(Errc::format, "nifti: unsupported datatype");
}

void put_u16(std::vector<std::uint8_t>& buf, std::size_t off, std::uint16_t v) {
  buf[off] = static_cast<std::uint8_t>(v & 0xff);
  buf[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(std::vector<std::uint8_t>& buf, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    buf[off + i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
}

void put_f32(std::vector<std::uint8_t>& buf, std::size_t off, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(buf, off, u);
}

}  // namespace

NiftiReadResult nifti_read(const std::vector<std::uint8_t>& raw) {
  const std::vector<std::uint8_t> plain =
      is_gzip(raw) ? gzip_decompress(raw) : raw;
  if (plain.size() < kHeaderSize)
    throw Error(Errc::format, "nifti: truncated header");

  // Endianness detection via the header-size field.
  bool swap = false;
  {
    Cursor le(plain.data(), false);
    if (le.i32(0) != 348) {
      Cursor be(plain.data(), true);
      if (be.i32(0) != 348)
        throw Error(Errc::format, "nifti: header size field is not 348");
      swap = true;
    }
  }
  // On a little-endian host `swap` means the file is big-endian.
  Cursor h(plain.data(), swap);

  char magic[4];
  std::memcpy(magic, plain.data() + 344, 4);
  if (std::memcmp(magic, "ni1", 4) == 0)
    throw Error(Errc::format,
                "nifti: .hdr/.img pairs are not supported, expected magic n+1");
  if (std::memcmp(magic, "n+1", 4) != 0)
    throw Error(Errc::format, "nifti: wrong magic");

  const std::int16_t ndim = h.i16(40);
  if (ndim < 1 || ndim > 7)
    throw Error(Errc::format, "nifti: invalid dim[0]");
  std::array<int, 4> dim{1, 1, 1, 1};
  for (int k = 1; k <= ndim && k <= 4; ++k) {
    std::int16_t dk = h.i16(40 + 2 * k);
    if (dk < 1) throw Error(Errc::format, "nifti: nonpositive dimension");
    dim[k - 1] = dk;
  }
  if (dim[3] != 1)
    throw Error(Errc::format, "nifti: 4D input not supported");
  for (int k = 5; k <= ndim; ++k)
    if (h.i16(40 + 2 * k) > 1)
      throw Error(Errc::format, "nifti: >3D input not supported");

  const std::int16_t dt_code = h.i16(70);
  NiftiDatatype dt;
  switch (dt_code) {
    case 2: dt = NiftiDatatype::uint8; break;
    case 4: dt = NiftiDatatype::int16; break;
    case 8: dt = NiftiDatatype::int32; break;
    case 16: dt = NiftiDatatype::float32; break;
    case 64: dt = NiftiDatatype::float64; break;
    default:
      throw Error(Errc::format, "nifti: unsupported datatype code " +
                                    std::to_string(dt_code));
  }

  NiftiMeta meta;
  meta.dim = dim;
  meta.datatype = dt;
  meta.big_endian = swap;
  meta.magic = "n+1";
  auto pixdim = [&](int k) {
    float s = h.f32(76 + 4 * k);
    return s > 0.0f ? static_cast<double>(s) : 1.0;
  };
  meta.spacing = {pixdim(1), pixdim(2), pixdim(3)};
  meta.scl_slope = h.f32(112);
  meta.scl_inter = h.f32(116);

  const float vox_offset_f = h.f32(108);
  if (!(vox_offset_f >= static_cast<float>(kVoxOffset)))
    throw Error(Errc::format, "nifti: vox_offset below 352");
  const std::size_t vox_offset = static_cast<std::size_t>(vox_offset_f);

  const std::size_t n =
      static_cast<std::size_t>(dim[0]) * dim[1] * dim[2];
  const std::size_t esize = dtype_size(dt);
  if (plain.size() < vox_offset + n * esize)
    throw Error(Errc::format, "nifti: truncated voxel data");

  std::vector<double> values(n);
  const std::uint8_t* p = plain.data() + vox_offset;
  const bool apply_scl = meta.scl_slope != 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    double v = decode_value(p + i * esize, dt, swap);
    if (apply_scl)
      v = static_cast<double>(meta.scl_slope) * v +
          static_cast<double>(meta.scl_inter);
    values[i] = v;
  }

  Volume vol({dim[0], dim[1], dim[2]}, meta.spacing, std::move(values));
  return {std::move(vol), meta};
}

NiftiReadResult nifti_read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "nifti: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return nifti_read(bytes);
}

std::vector<std::uint8_t> nifti_write(const Volume& v,
                                      const NiftiWriteOptions& opt) {
  const Dim3 d = v.dim();
  if (d.nx > 32767 || d.ny > 32767 || d.nz > 32767)
    throw Error(Errc::invalid_argument,
                "nifti: dims exceed the int16 header fields");

  const std::size_t esize = dtype_size(opt.datatype);
  std::vector<std::uint8_t> buf(kVoxOffset + v.size() * esize, 0);

  put_u32(buf, 0, 348);                      // sizeof_hdr
  buf[39] = 'r';                             // regular
  put_u16(buf, 40, 3);                       // dim[0]
  put_u16(buf, 42, static_cast<std::uint16_t>(d.nx));
  put_u16(buf, 44, static_cast<std::uint16_t>(d.ny));
  put_u16(buf, 46, static_cast<std::uint16_t>(d.nz));
  for (int k = 4; k <= 7; ++k) put_u16(buf, 40 + 2 * k, 1);
  put_u16(buf, 70, static_cast<std::uint16_t>(opt.datatype));
  put_u16(buf, 72, static_cast<std::uint16_t>(esize * 8));  // bitpix
  put_f32(buf, 76, 1.0f);                    // pixdim[0] (qfac)
  put_f32(buf, 80, static_cast<float>(v.spacing().sx));
  put_f32(buf, 84, static_cast<float>(v.spacing().sy));
  put_f32(buf, 88, static_cast<float>(v.spacing().sz));
  put_f32(buf, 108, static_cast<float>(kVoxOffset));  // vox_offset
  put_f32(buf, 112, 1.0f);                   // scl_slope
  put_f32(buf, 116, 0.0f);                   // scl_inter
  buf[123] = 2;                              // xyzt_units: mm
  std::memcpy(buf.data() + 148, "meseg", 5); // descrip
  std::memcpy(buf.data() + 344, "n+1", 4);   // magic, includes the NUL

  std::uint8_t* p = buf.data() + kVoxOffset;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v[i];
    switch (opt.datatype) {
      case NiftiDatatype::uint8:
        p[i] = static_cast<std::uint8_t>(x);
        break;
      case NiftiDatatype::int16: {
        std::int16_t s = static_cast<std::int16_t>(x);
        std::uint16_t u;
        std::memcpy(&u, &s, 2);
        p[2 * i] = static_cast<std::uint8_t>(u & 0xff);
        p[2 * i + 1] = static_cast<std::uint8_t>(u >> 8);
        break;
      }
      case NiftiDatatype::int32: {
        std::int32_t s = static_cast<std::int32_t>(x);
        std::uint32_t u;
        std::memcpy(&u, &s, 4);
        for (int b = 0; b < 4; ++b)
          p[4 * i + b] = static_cast<std::uint8_t>((u >> (8 * b)) & 0xff);
        break;
      }
      case NiftiDatatype::float32: {
        float f = static_cast<float>(x);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        for (int b = 0; b < 4; ++b)
          p[4 * i + b] = static_cast<std::uint8_t>((u >> (8 * b)) & 0xff);
        break;
      }
      case NiftiDatatype::float64: {
        std::uint64_t u;
        std::memcpy(&u, &x, 8);
        for (int b = 0; b < 8; ++b)
          p[8 * i + b] = static_cast<std::uint8_t>((u >> (8 * b)) & 0xff);
        break;
      }
    }
  }

  if (opt.gzip) return gzip_compress(buf);
  return buf;
}

void nifti_write_file(const std::string& path, const Volume& v,
                      const NiftiWriteOptions& opt) {
  const auto bytes = nifti_write(v, opt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "nifti: cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "nifti: write failed for " + path);
}

std::vector<std::uint8_t> nifti_write_mask(const BinaryMask& m, bool gzip) {
  std::vector<double> values(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) values[i] = m[i] ? 1.0 : 0.0;
  Volume v(m.dim(), m.spacing(), std::move(values));
  return nifti_write(v, {NiftiDatatype::uint8, gzip});
}

void nifti_write_mask_file(const std::string& path, const BinaryMask& m,
                           bool gzip) {
  const auto bytes = nifti_write_mask(m, gzip);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "nifti: cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "nifti: write failed for " + path);
}

BinaryMask volume_to_mask(const Volume& v) {
  std::vector<std::uint8_t> data(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) data[i] = v[i] != 0.0 ? 1 : 0;
  return BinaryMask(v.dim(), v.spacing(), std::move(data));
}

ProbMap volume_to_probmap(const Volume& v) { return ProbMap(v); }

}  // namespace meseg
