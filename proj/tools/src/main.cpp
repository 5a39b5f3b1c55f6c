#include "app.hpp"

int main(int argc, char** argv) { return cpae::app::main(argc, argv); }
