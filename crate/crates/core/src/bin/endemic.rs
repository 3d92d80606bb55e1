fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = std::env::var_os(endemic::config::DATA_ROOT_ENV);
    std::process::exit(endemic::cli::main_with(std::env::args_os(), root));
}
