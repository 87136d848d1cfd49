#pragma once

#include <string>
#include <vector>

namespace pooltest {

/// Minimal JSON emitter. All numbers are written with 17 significant
/// digits so values round-trip exactly and match the CSV output after
/// rounding to its 9 digits.
class JsonWriter {
 public:
  JsonWriter& begin_object();
  JsonWriter& end_object();
  JsonWriter& begin_array();
  JsonWriter& end_array();
  JsonWriter& key(const std::string& name);
  JsonWriter& value(const std::string& v);
  JsonWriter& value(const char* v);
  JsonWriter& value(double v);
  JsonWriter& value(long long v);
  JsonWriter& value(int v);
  JsonWriter& value(bool v);
  JsonWriter& value_null();

  const std::string& str() const { return out_; }

  static std::string escape(const std::string& s);
  static std::string number(double v);

 private:
  void separator();

  std::string out_;
  std::vector<bool> needs_comma_;
  bool pending_key_ = false;
};

}  // namespace pooltest
