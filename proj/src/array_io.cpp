#include "sepuq/array_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sepuq/errors.hpp"

namespace sepuq::io {

static_assert(std::endian::native == std::endian::little, "the container format assumes a little-endian host");

namespace {

constexpr char magic[6] = {'S', 'E', 'P', 'U', 'Q', '1'};

template <class T> void write_raw(std::ostream& out, T value)
{
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T> T read_raw(std::istream& in, const std::filesystem::path& path)
{
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw ValidationError("truncated array file " + path.string());
    }
    return value;
}

std::string read_bytes(std::istream& in, std::uint64_t n, const std::filesystem::path& path)
{
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
        throw ValidationError("truncated array file " + path.string());
    }
    return s;
}

} // namespace

void ArrayFile::put(const std::string& name, const Eigen::MatrixXd& m)
{
    Array a;
    a.dims = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    a.values.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) a.values.push_back(m(r, c));
    }
    put(name, std::move(a));
}

void ArrayFile::put(const std::string& name, const Eigen::VectorXd& v)
{
    put(name, Array{{static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size())});
}

void ArrayFile::put(const std::string& name, double x) { put(name, Array{{}, {x}}); }

void ArrayFile::put(const std::string& name, Array a)
{
    std::size_t n = 1;
    for (auto d : a.dims) n *= d;
    if (n != a.values.size()) throw ValidationError("array '" + name + "' dims do not match its value count");
    texts_.erase(name);
    arrays_[name] = std::move(a);
}

void ArrayFile::put_text(const std::string& name, std::string text)
{
    arrays_.erase(name);
    texts_[name] = std::move(text);
}

bool ArrayFile::has(const std::string& name) const { return arrays_.count(name) > 0 || texts_.count(name) > 0; }

const Array& ArrayFile::array(const std::string& name) const
{
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ValidationError("array file has no array named '" + name + "'");
    return it->second;
}

Eigen::MatrixXd ArrayFile::matrix(const std::string& name) const
{
    const auto& a = array(name);
    if (a.dims.size() != 2) throw ValidationError("record '" + name + "' is not two-dimensional");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(a.dims[0]), static_cast<Eigen::Index>(a.dims[1]));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = a.values[k++];
    }
    return m;
}

Eigen::VectorXd ArrayFile::vector(const std::string& name) const
{
    const auto& a = array(name);
    if (a.dims.size() != 1) throw ValidationError("record '" + name + "' is not one-dimensional");
    return Eigen::Map<const Eigen::VectorXd>(a.values.data(), static_cast<Eigen::Index>(a.values.size()));
}

double ArrayFile::scalar(const std::string& name) const
{
    const auto& a = array(name);
    if (a.values.size() != 1) throw ValidationError("record '" + name + "' is not a scalar");
    return a.values[0];
}

const std::string& ArrayFile::text(const std::string& name) const
{
    auto it = texts_.find(name);
    if (it == texts_.end()) throw ValidationError("array file has no text record named '" + name + "'");
    return it->second;
}

void ArrayFile::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out.write(magic, sizeof(magic));
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(arrays_.size() + texts_.size()));

    // Merge both maps so the file is ordered by name regardless of kind.
    auto a = arrays_.begin();
    auto t = texts_.begin();
    while (a != arrays_.end() || t != texts_.end()) {
        const bool take_array = t == texts_.end() || (a != arrays_.end() && a->first < t->first);
        const std::string& name = take_array ? a->first : t->first;
        write_raw<std::uint8_t>(out, take_array ? 0 : 1);
        write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        if (take_array) {
            write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(a->second.dims.size()));
            for (auto d : a->second.dims) write_raw<std::uint64_t>(out, d);
            out.write(reinterpret_cast<const char*>(a->second.values.data()),
                      static_cast<std::streamsize>(a->second.values.size() * sizeof(double)));
            ++a;
        } else {
            write_raw<std::uint64_t>(out, t->second.size());
            out.write(t->second.data(), static_cast<std::streamsize>(t->second.size()));
            ++t;
        }
    }
    if (!out) throw ValidationError("failed while writing " + path.string());
}

ArrayFile ArrayFile::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    char head[sizeof(magic)];
    if (!in.read(head, sizeof(head)) || std::memcmp(head, magic, sizeof(magic)) != 0) {
        throw ValidationError(path.string() + " is not a SEPUQ1 array file");
    }
    ArrayFile file;
    const auto count = read_raw<std::uint32_t>(in, path);
    for (std::uint32_t r = 0; r < count; ++r) {
        const auto kind = read_raw<std::uint8_t>(in, path);
        const auto name = read_bytes(in, read_raw<std::uint32_t>(in, path), path);
        if (kind == 0) {
            Array a;
            const auto ndim = read_raw<std::uint32_t>(in, path);
            std::size_t n = 1;
            for (std::uint32_t d = 0; d < ndim; ++d) {
                a.dims.push_back(static_cast<std::size_t>(read_raw<std::uint64_t>(in, path)));
                n *= a.dims.back();
            }
            a.values.resize(n);
            if (n > 0 && !in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
                throw ValidationError("truncated array file " + path.string());
            }
            file.arrays_[name] = std::move(a);
        } else if (kind == 1) {
            file.texts_[name] = read_bytes(in, read_raw<std::uint64_t>(in, path), path);
        } else {
            throw ValidationError("unknown record kind in " + path.string());
        }
    }
    return file;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Eigen::MatrixXd& rows)
{
    if (!header.empty() && static_cast<Eigen::Index>(header.size()) != rows.cols()) {
        throw ValidationError("CSV header has " + std::to_string(header.size()) + " columns, table has " +
                              std::to_string(rows.cols()));
    }
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << std::setprecision(17);
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    if (!header.empty()) out << '\n';
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        for (Eigen::Index c = 0; c < rows.cols(); ++c) out << (c ? "," : "") << rows(r, c);
        out << '\n';
    }
}

} // namespace sepuq::io
