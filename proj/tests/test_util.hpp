#pragma once

#include <gtest/gtest.h>

#include "nanozone/error.hpp"

// Asserts that `stmt` throws nanozone::Error carrying `code`.
#define EXPECT_ERROR_CODE(stmt, want_code)                                             \
  do {                                                                            \
    try {                                                                         \
      stmt;                                                                       \
      ADD_FAILURE() << #stmt " did not throw";                                    \
    } catch (const ::nanozone::Error& e_) {                                       \
      EXPECT_EQ(e_.code(), want_code) << e_.what();                                 \
    }                                                                             \
  } while (0)
