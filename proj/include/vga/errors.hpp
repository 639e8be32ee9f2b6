#pragma once

#include <stdexcept>
#include <string>

namespace vga {

// Root of every error thrown by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define VGA_DEFINE_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    explicit Name(const std::string& w) \
        : Error(#Name ": " + w) {}      \
  }

VGA_DEFINE_ERROR(InvalidInput);
VGA_DEFINE_ERROR(ShapeError);
VGA_DEFINE_ERROR(IndexError);
VGA_DEFINE_ERROR(FormatError);
VGA_DEFINE_ERROR(CapacityError);
VGA_DEFINE_ERROR(InvalidSpec);
VGA_DEFINE_ERROR(ConfigError);
VGA_DEFINE_ERROR(InvalidParams);
VGA_DEFINE_ERROR(IoError);

#undef VGA_DEFINE_ERROR

}  // namespace vga
