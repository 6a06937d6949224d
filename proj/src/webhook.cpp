#include <string>

#include "httplib.h"

#include "hemo/alerting.hpp"

namespace hemo::alert {

bool http_post_json(const std::string& url, const std::string& json_body) {
  // split "http://host:port" from the path
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) return false;
  auto path_start = url.find('/', scheme_end + 3);
  const std::string base = path_start == std::string::npos ? url : url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(base);
  client.set_connection_timeout(2, 0);
  client.set_read_timeout(2, 0);
  auto res = client.Post(path, json_body, "application/json");
  return res && res->status >= 200 && res->status < 300;
}

}  // namespace hemo::alert
