#pragma once

// Single include point for cpp-httplib so every TU sees the same feature set.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
