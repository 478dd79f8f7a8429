fn main() {
    std::process::exit(gwm_harness::main_with_args(std::env::args_os()));
}
