#ifndef SEPUQ_ARRAY_IO_HPP
#define SEPUQ_ARRAY_IO_HPP

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

/**
 * Binary container for fields and tables.
 *
 *     "SEPUQ1"                         6 bytes
 *     record count                     uint32
 *     per record:
 *       kind                           uint8, 0 = float64 array, 1 = text
 *       name length, name              uint32, bytes
 *       array: ndim, dims...           uint32, uint64 each
 *              values                  float64, row-major
 *       text:  length, bytes           uint64, bytes
 *
 * All integers and floats little-endian. Records are written in name order.
 */

namespace sepuq::io {

struct Array
{
    std::vector<std::size_t> dims;
    std::vector<double> values; // row-major
};

class ArrayFile
{
public:
    void put(const std::string& name, const Eigen::MatrixXd& m);
    void put(const std::string& name, const Eigen::VectorXd& v);
    void put(const std::string& name, double x);
    void put(const std::string& name, Array a);
    void put_text(const std::string& name, std::string text);

    bool has(const std::string& name) const;
    const Array& array(const std::string& name) const;
    Eigen::MatrixXd matrix(const std::string& name) const;
    Eigen::VectorXd vector(const std::string& name) const;
    double scalar(const std::string& name) const;
    const std::string& text(const std::string& name) const;

    void save(const std::filesystem::path& path) const;
    static ArrayFile load(const std::filesystem::path& path);

private:
    std::map<std::string, Array> arrays_;
    std::map<std::string, std::string> texts_;
};

// Plain comma-separated table; values printed with 17 significant digits.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Eigen::MatrixXd& rows);

} // namespace sepuq::io

#endif
