#include "ppx/json_io.hpp"
int main(int, char**) { return 0; }
