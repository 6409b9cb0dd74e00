use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("REACH_REC_LOG", "warn")).init();
    std::process::exit(reach_rec::cli::main_with(std::env::args_os()));
}
