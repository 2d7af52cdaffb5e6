namespace lrnoise {}
