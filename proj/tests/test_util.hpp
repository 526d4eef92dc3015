#pragma once

#include <gtest/gtest.h>

#include "pwseg/error.hpp"

template <class F>
pwseg::ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const pwseg::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return pwseg::ErrorKind::internal;
}
