fn main() {
    std::process::exit(cav_detect::app::cli_dispatch(std::env::args_os()));
}
