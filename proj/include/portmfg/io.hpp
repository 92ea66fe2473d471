#pragma once
#include "portmfg/inference.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace pmfg {

inline constexpr const char* kFlowHeader = "date,origin,destination,good,tons";

struct FlowLoad {
    FlowSeries series;
    long rows = 0;              // data rows read
    long merged_duplicates = 0; // rows folded into an earlier (date, origin, destination, good)
    bool has_range() const { return !series.empty(); }
};

FlowLoad load_flows(const std::string& path);
FlowLoad parse_flows(std::istream& in);
std::string format_flows(const FlowSeries& series);
void write_flows(const std::string& path, const FlowSeries& series);

struct DistanceLoad {
    std::vector<std::string> labels;  // in the order requested (or the file's order)
    MatrixXd matrix;
    int diagonal_coerced = 0;
    int asymmetric_pairs = 0;
    std::vector<std::string> warnings;
};

// labels empty: accept the file's labels
DistanceLoad load_distances(const std::string& path, const std::vector<std::string>& labels = {});
DistanceLoad parse_distances(std::istream& in, const std::vector<std::string>& labels = {});
std::string format_matrix(const std::vector<std::string>& labels, const MatrixXd& M);
void write_distances(const std::string& path, const std::vector<std::string>& labels, const MatrixXd& T);

// shortest decimal text that reads back to the same double
std::string format_double(double x);

// temp file in the same directory, then rename
void atomic_write(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::string& path);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace pmfg
