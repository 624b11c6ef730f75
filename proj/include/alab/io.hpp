#pragma once
// Versioned binary container shared by the dataset, checkpoint, and trace
// formats. Layout: 8-byte magic, u32 version, payload, u64 FNV-1a checksum
// of the payload. Readers verify magic, version, and checksum.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "alab/rng.hpp"

namespace alab {

class BinaryWriter {
public:
    void write_bytes(const void* p, size_t len) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + len);
    }

    template <class T>
    void write_pod(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        write_bytes(&v, sizeof(T));
    }

    void write_u8(uint8_t v) { write_pod(v); }
    void write_u32(uint32_t v) { write_pod(v); }
    void write_u64(uint64_t v) { write_pod(v); }
    void write_i32(int32_t v) { write_pod(v); }
    void write_i64(int64_t v) { write_pod(v); }
    void write_f32(float v) { write_pod(v); }
    void write_f64(double v) { write_pod(v); }

    void write_string(const std::string& s) {
        write_u64(s.size());
        write_bytes(s.data(), s.size());
    }

    template <class T>
    void write_vec(const std::vector<T>& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        write_u64(v.size());
        write_bytes(v.data(), v.size() * sizeof(T));
    }

    // Writes magic + version + payload + checksum(payload) to disk.
    void save(const std::string& path, const char magic[8], uint32_t version) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for writing: " + path);
        f.write(magic, 8);
        f.write(reinterpret_cast<const char*>(&version), 4);
        f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        uint64_t checksum = fnv1a(buf_.data(), buf_.size());
        f.write(reinterpret_cast<const char*>(&checksum), 8);
        if (!f) throw std::runtime_error("write failed: " + path);
    }

    const std::vector<char>& bytes() const { return buf_; }

private:
    std::vector<char> buf_;
};

class BinaryReader {
public:
    // Loads a container, verifying magic, version and checksum.
    static BinaryReader load(const std::string& path, const char magic[8], uint32_t expect_version) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open for reading: " + path);
        f.seekg(0, std::ios::end);
        auto total = static_cast<size_t>(f.tellg());
        f.seekg(0);
        if (total < 20) throw std::runtime_error("file too short: " + path);
        std::vector<char> all(total);
        f.read(all.data(), static_cast<std::streamsize>(total));
        if (!f) throw std::runtime_error("read failed: " + path);
        if (std::memcmp(all.data(), magic, 8) != 0)
            throw std::runtime_error("bad magic in " + path);
        uint32_t version;
        std::memcpy(&version, all.data() + 8, 4);
        if (version != expect_version)
            throw std::runtime_error("version mismatch in " + path + ": file has " +
                                     std::to_string(version) + ", expected " +
                                     std::to_string(expect_version));
        size_t payload_len = total - 20;
        uint64_t stored;
        std::memcpy(&stored, all.data() + total - 8, 8);
        uint64_t computed = fnv1a(all.data() + 12, payload_len);
        if (stored != computed)
            throw std::runtime_error("checksum mismatch in " + path + " (file corrupted)");
        BinaryReader r;
        r.buf_.assign(all.begin() + 12, all.end() - 8);
        return r;
    }

    void read_bytes(void* p, size_t len) {
        if (pos_ + len > buf_.size()) throw std::runtime_error("binary read past end of payload");
        std::memcpy(p, buf_.data() + pos_, len);
        pos_ += len;
    }

    template <class T>
    T read_pod() {
        T v;
        read_bytes(&v, sizeof(T));
        return v;
    }

    uint8_t read_u8() { return read_pod<uint8_t>(); }
    uint32_t read_u32() { return read_pod<uint32_t>(); }
    uint64_t read_u64() { return read_pod<uint64_t>(); }
    int32_t read_i32() { return read_pod<int32_t>(); }
    int64_t read_i64() { return read_pod<int64_t>(); }
    float read_f32() { return read_pod<float>(); }
    double read_f64() { return read_pod<double>(); }

    std::string read_string() {
        auto len = read_u64();
        std::string s(len, '\0');
        read_bytes(s.data(), len);
        return s;
    }

    template <class T>
    std::vector<T> read_vec() {
        auto len = read_u64();
        std::vector<T> v(len);
        read_bytes(v.data(), len * sizeof(T));
        return v;
    }

    bool at_end() const { return pos_ == buf_.size(); }

private:
    std::vector<char> buf_;
    size_t pos_ = 0;
};

}  // namespace alab
