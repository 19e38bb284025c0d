#pragma once

// Flat binary container for frozen tensors: a header, string attributes and
// named tensors (rank, dims, row-major f64 values). All integers and doubles
// are little-endian.
//
//   "DSTLSIDE" u32 version
//   u32 n_attrs   { str key, str value } * n_attrs
//   u32 n_tensors { str name, u32 rank, u64 dim * rank, f64 value * size } * n_tensors
//   str = u32 length + bytes

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "distill/student.hpp"
#include "distill/teacher.hpp"
#include "distill/tensor.hpp"

namespace distill {

inline constexpr std::uint32_t kSidecarVersion = 1;

struct Sidecar {
  std::map<std::string, std::string> attributes;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  const std::string& attribute(const std::string& key) const;
};

std::string encode_sidecar(const Sidecar& sidecar);
/// Throws ParseError on a bad magic, unknown version or truncated payload.
Sidecar decode_sidecar(const std::string& bytes);

void write_sidecar(const Sidecar& sidecar, const std::filesystem::path& path);
Sidecar read_sidecar(const std::filesystem::path& path);

Sidecar to_sidecar(const TeacherArtifacts& artifacts);
TeacherArtifacts teacher_artifacts_from(const Sidecar& sidecar);
Sidecar to_sidecar(const StudentParams& params);
StudentParams student_params_from(const Sidecar& sidecar);

void save_artifacts(const TeacherArtifacts& artifacts, const std::filesystem::path& path);
TeacherArtifacts load_artifacts(const std::filesystem::path& path);
void save_student(const StudentParams& params, const std::filesystem::path& path);
StudentParams load_student(const std::filesystem::path& path);

}  // namespace distill
