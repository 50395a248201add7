#ifndef FPSWITCH_KV_CONFIG_H_
#define FPSWITCH_KV_CONFIG_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fpswitch {

// `key = value` text config. Blank lines and lines starting with '#' are
// ignored; later keys override earlier ones. Lists are comma separated.
class KvConfig {
 public:
  static KvConfig Parse(const std::string& text);
  static KvConfig Load(const std::string& path);

  bool Has(const std::string& key) const { return values_.count(key) != 0; }
  void Set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }

  std::string GetString(const std::string& key, const std::string& def) const;
  double GetDouble(const std::string& key, double def) const;
  int GetInt(const std::string& key, int def) const;
  uint64_t GetU64(const std::string& key, uint64_t def) const;
  bool GetBool(const std::string& key, bool def) const;
  std::vector<std::string> GetList(const std::string& key,
                                   const std::vector<std::string>& def) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace fpswitch

#endif  // FPSWITCH_KV_CONFIG_H_
