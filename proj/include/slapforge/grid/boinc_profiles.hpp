#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "slapforge/error.hpp"
#include "slapforge/profile/resolve.hpp"

namespace slapforge::grid {

// Profiles, archives and data files for the BOINC integration, served
// under the repository URL operators hand to the master.
inline constexpr std::string_view kRepoBase = "http://git.erp5.org/gitweb/slapos.git/blob/refs/heads/grid-computing:";

inline std::string repo_url(std::string_view path) { return std::string(kRepoBase) + std::string(path); }

inline const std::string kBoincSoftwareUrl = repo_url("/software/boinc/software.cfg");
inline const std::string kBoincE2eSoftwareUrl = repo_url("/software/boinc-e2e/software.cfg");
inline const std::string kBoincClientSoftwareUrl = repo_url("/software/boinc-client/software.cfg");

// Part collecting the application binary and work unit parameters.
inline constexpr std::string_view kBoincApplicationListing =
    R"(#Download Boinc Application Binary and configure project
[boinc-application]
recipe = hexagonit.recipe.download
url = ${boinc:location}/libexec/examples/upper_case
download-only = true
filename = upper_case
#Application configuration
app-name = upper_case
version = 1.0
exec-extension = 
platform = x86_64-pc-linux-gnu
#Work Unit: wu-name without blanc space: wu-number number of work unit
wu-name = simpletest
wu-number = 1
)";

// Part deploying that application into the project of the instance.
inline constexpr std::string_view kBoincAppListing =
    R"(#Deploy a Boinc application in existing boinc server instance.
[boinc-app]
<= boinc-server
recipe = slapos.cookbook:boinc.app
binary = ${boinc-application:location}/${boinc-application:filename}
#app-name should be unique (for all app deployed in a boinc instance)
app-name = ${boinc-application:app-name}
version = ${boinc-application:version}
platform = ${boinc-application:platform}
extension = ${boinc-application:exec-extension}
dash = ${dash:location}/bin/dash
#templates
template-result = ${template_result:location}/${template_result:filename}
template-wu = ${template_wu:location}/${template_wu:filename}
#Work Unit
wu-name = ${boinc-application:wu-name}
wu-number = ${boinc-application:wu-number}
input-file = ${template_input:location}/${template_input:filename}
)";

inline constexpr std::string_view kBoincInput = "hello from a slapos partition";

inline const std::map<std::string, std::string>& boinc_profile_store() {
  static const std::map<std::string, std::string> store = [] {
    std::map<std::string, std::string> s;
    auto download = [](const std::string& section, const std::string& url, const std::string& extra = {}) {
      return "[" + section + "]\nrecipe = hexagonit.recipe.download\nurl = " + url + "\n" + extra;
    };

    // components
    s[repo_url("/component/boinc/buildout.cfg")] =
        download("boinc", repo_url("/component/boinc/boinc-7.0.sim-archive"),
                 "configure-options =\n  --disable-manager\n  --disable-client\n");
    s[repo_url("/component/boinc/boinc-7.0.sim-archive")] =
        "#sim-archive\n"
        "@@ bin/boinc_server\n#!sim-exec boinc-server\n"
        "@@ libexec/examples/upper_case\n#!sim-exec upper_case\n"
        "@@ libexec/examples/reverse\n#!sim-exec reverse\n";
    s[repo_url("/component/dash/buildout.cfg")] = download("dash", repo_url("/component/dash/dash-0.5.sim-archive"));
    s[repo_url("/component/dash/dash-0.5.sim-archive")] = "#sim-archive\n@@ bin/dash\n#!sim-exec dash\n";
    s[repo_url("/component/mariadb/buildout.cfg")] =
        download("mariadb", repo_url("/component/mariadb/mariadb-5.5.sim-archive"));
    s[repo_url("/component/mariadb/mariadb-5.5.sim-archive")] = "#sim-archive\n@@ bin/mysqld\n#!sim-exec mysqld\n";
    s[repo_url("/component/boinc-client/buildout.cfg")] =
        download("boinc-client-component", repo_url("/component/boinc-client/boinc-client-7.0.sim-archive"));
    s[repo_url("/component/boinc-client/boinc-client-7.0.sim-archive")] =
        "#sim-archive\n@@ bin/boinc_client\n#!sim-exec boinc-client\n";

    // stack
    s[repo_url("/stack/boinc/buildout.cfg")] =
        "[buildout]\n"
        "extends =\n"
        "  ../../component/boinc/buildout.cfg\n"
        "  ../../component/dash/buildout.cfg\n"
        "  ../../component/mariadb/buildout.cfg\n"
        "parts =\n  boinc\n  dash\n  mariadb\n\n"
        "[instance-profile]\n"
        "server = " + repo_url("/stack/boinc/instance-boinc.cfg") + "\n"
        "mariadb = " + repo_url("/stack/boinc/instance-mariadb.cfg") + "\n";
    s[repo_url("/stack/boinc/instance-boinc.cfg")] =
        "[buildout]\nparts =\n  boinc-server\n\n"
        "[boinc-server]\n"
        "recipe = slapos.cookbook:boinc\n"
        "server-binary = ${boinc:location}/bin/boinc_server\n";
    s[repo_url("/stack/boinc/instance-mariadb.cfg")] =
        "[buildout]\nparts =\n  mariadb-instance\n\n"
        "[mariadb-instance]\n"
        "recipe = slapos.cookbook:mariadb\n"
        "binary = ${mariadb:location}/bin/mysqld\n";

    // software: BOINC server with the upper_case example
    s[kBoincSoftwareUrl] =
        "[buildout]\n"
        "extends = ../../stack/boinc/buildout.cfg\n"
        "parts =\n  boinc\n  dash\n  mariadb\n  template_result\n  template_wu\n  template_input\n"
        "  boinc-application\n\n"
        "[instance-profile]\n"
        "server = " + repo_url("/software/boinc/boinc-app.cfg") + "\n\n" +
        download("template_result", repo_url("/software/boinc/templates/template_result.xml"),
                 "download-only = true\nfilename = template_result.xml\n") + "\n" +
        download("template_wu", repo_url("/software/boinc/templates/template_wu.xml"),
                 "download-only = true\nfilename = template_wu.xml\n") + "\n" +
        download("template_input", repo_url("/software/boinc/input/input_file"),
                 "download-only = true\nfilename = input_file\n") + "\n" +
        std::string(kBoincApplicationListing);
    s[repo_url("/software/boinc/boinc-app.cfg")] =
        "[buildout]\n"
        "extends = ../../stack/boinc/instance-boinc.cfg\n"
        "parts =\n  boinc-server\n  boinc-app\n\n" +
        std::string(kBoincAppListing);
    s[repo_url("/software/boinc/templates/template_result.xml")] =
        "<output_template>\n<file_info><name><OUTFILE_0/></name></file_info>\n</output_template>\n";
    s[repo_url("/software/boinc/templates/template_wu.xml")] =
        "<input_template>\n<file_info><number>0</number></file_info>\n</input_template>\n";
    s[repo_url("/software/boinc/input/input_file")] = std::string(kBoincInput);

    // software: the same release producing five work units
    s[kBoincE2eSoftwareUrl] =
        "[buildout]\n"
        "extends = ../boinc/software.cfg\n\n"
        "[boinc-application]\n"
        "wu-number = 5\n";

    // software: BOINC client
    s[kBoincClientSoftwareUrl] =
        "[buildout]\n"
        "extends = ../../component/boinc-client/buildout.cfg\n"
        "parts =\n  boinc-client-component\n\n"
        "[instance-profile]\n"
        "client = " + repo_url("/software/boinc-client/instance-boinc-client.cfg") + "\n"
        "default = " + repo_url("/software/boinc-client/instance-boinc-client.cfg") + "\n";
    s[repo_url("/software/boinc-client/instance-boinc-client.cfg")] =
        "[buildout]\nparts =\n  boinc-client\n\n"
        "[boinc-client]\n"
        "recipe = slapos.cookbook:boinc-client\n"
        "client-binary = ${boinc-client-component:location}/bin/boinc_client\n";
    return s;
  }();
  return store;
}

inline profile::FetchFn bundled_fetch() {
  return [](const std::string& origin) -> std::string {
    const auto& store = boinc_profile_store();
    auto it = store.find(origin);
    if (it == store.end()) throw FetchError("no such profile: " + origin);
    return it->second;
  };
}

// Local files first, then the bundled store.
inline profile::FetchFn local_then_bundled() {
  return [bundled = bundled_fetch()](const std::string& origin) -> std::string {
    if (origin.find("://") == std::string::npos) {
      std::ifstream in(origin, std::ios::binary);
      if (in) {
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
      }
    }
    return bundled(origin);
  };
}

}  // namespace slapforge::grid
